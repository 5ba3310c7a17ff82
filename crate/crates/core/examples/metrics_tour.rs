//! Every image distance on a few pairs from the synthetic set.

use dsrgan::data::build_dataset;
use dsrgan::metrics::{hsv_histogram, ColorHist, Distance, Fbpd, Hog, Region};

fn main() -> dsrgan::Result<()> {
    let ds = build_dataset(6, 11, 32)?;
    let dists: Vec<Box<dyn Distance>> = vec![
        Box::new(Hog),
        Box::new(Fbpd),
        Box::new(ColorHist(Region::Full)),
        Box::new(ColorHist(Region::UpperThird)),
    ];
    let pairs = [
        ("target 0 vs itself", &ds.target[0], &ds.target[0]),
        ("target 0 vs its gray", &ds.target[0], &ds.auxiliary[0]),
        ("target 0 vs target 1", &ds.target[0], &ds.target[1]),
        ("target 2 vs target 5", &ds.target[2], &ds.target[5]),
    ];
    for (label, a, b) in pairs {
        print!("{label:<22}");
        for d in &dists {
            print!("  {} {:.4}", d.name(), d.distance(a, b)?);
        }
        println!();
    }
    let h = hsv_histogram(&ds.target[0], Region::Full)?;
    let top = h.iter().enumerate().fold((0, 0.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
    println!("target 0 histogram: {} bins, heaviest bin {} holds {:.3}", h.len(), top.0, top.1);
    Ok(())
}
