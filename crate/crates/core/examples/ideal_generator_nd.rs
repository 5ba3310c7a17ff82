//! ND of procedural generators with known latent ties, against the data baseline.

use dsrgan::metrics::{data_baseline, estimate_nd, ColorHist, Fbpd, LatentGenerator, ProceduralGenerator, Region, Tie};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dsrgan::Result<()> {
    let pairs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let (ds, dr) = (Fbpd, ColorHist(Region::Full));
    for tie in [Tie::Ideal, Tie::IgnoreZs, Tie::IgnoreZr, Tie::Symmetric, Tie::Constant] {
        let mut gen = ProceduralGenerator::new(32, tie);
        let r = estimate_nd(&mut gen, &ds, &dr, pairs, 1)?;
        println!("{tie:?}: ND {:.4} +- {:.4}", r.nd.value, r.nd.std_error);
    }
    let mut gen = ProceduralGenerator::new(32, Tie::Ideal);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |d: usize| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let (zs, zr): (Vec<_>, Vec<_>) = (0..pairs).map(|_| (draw(gen.zs_dim()), draw(gen.zr_dim()))).unzip();
    let images = gen.generate(&zs, &zr)?;
    let b = data_baseline(&images, &ds, &dr, pairs, 3)?;
    println!("data baseline: E_ds {:.4}  E_dr {:.4}", b.e_ds_data.value, b.e_dr_data.value);
    Ok(())
}
