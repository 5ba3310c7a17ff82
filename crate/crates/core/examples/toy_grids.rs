//! ND of the four low/high shape-and-color diversity grids.

use dsrgan::metrics::{grid_nd, toy_grid, ColorHist, Diversity, Fbpd, Region};

fn main() -> dsrgan::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (ds, dr) = (Fbpd, ColorHist(Region::Full));
    for (s, c) in [
        (Diversity::Low, Diversity::Low),
        (Diversity::Low, Diversity::High),
        (Diversity::High, Diversity::Low),
        (Diversity::High, Diversity::High),
    ] {
        let r = grid_nd(&toy_grid(s, c, 4, 4, 32, seed), &ds, &dr)?;
        println!(
            "shape {s:?} color {c:?}: ND {:.4}  delta_ds {:.4}  delta_dr {:.4}",
            r.nd.value, r.delta_ds.value, r.delta_dr.value
        );
    }
    Ok(())
}
