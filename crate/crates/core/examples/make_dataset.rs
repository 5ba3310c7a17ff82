//! Builds the paired synthetic domains and writes them as PNGs plus a manifest.
//!
//! ```text
//! cargo run --release --example make_dataset -- runs/data 200
//! ```

use std::path::PathBuf;

use dsrgan::data::{build_dataset, to_grayscale};

fn main() -> dsrgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/data".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let ds = build_dataset(count, 0, 32)?;
    let manifest = ds.write(&out)?;
    println!("wrote {} pairs, manifest {}", ds.len(), manifest.display());
    for r in ds.manifest.iter().take(5) {
        println!("  {}", r.to_line());
    }
    // the auxiliary domain is the grayscale of the target, up to 8-bit rounding
    let worst = ds
        .target
        .iter()
        .zip(&ds.auxiliary)
        .flat_map(|(t, a)| to_grayscale(t).data().iter().zip(a.data()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    println!("max |gray(target) - auxiliary| = {worst:.5} (0.5/255 = {:.5})", 0.5 / 255.0);
    Ok(())
}
