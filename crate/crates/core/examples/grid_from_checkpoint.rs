//! Renders a z_s x z_r grid from a checkpoint and scores it with grid ND.
//!
//! ```text
//! cargo run --release --example grid_from_checkpoint -- runs/small/step_200.ckpt grid.png
//! ```

use std::path::PathBuf;

use dsrgan::cli::{composite, grid_latents, load_checkpoint_model};
use dsrgan::data::tensor_images;
use dsrgan::metrics::{grid_nd, ColorHist, Fbpd, Region};
use dsrgan::model::Domain;

fn main() -> dsrgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(args.next().expect("usage: grid_from_checkpoint <ckpt> [out.png]"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "grid.png".into()));
    let (rows, cols) = (5, 5);
    let mut model = load_checkpoint_model(&ckpt)?;
    let (ds, dr) = (model.config().ds_dim, model.config().dr_dim);
    let (zs, zr) = grid_latents(0, rows, cols, ds, dr);
    let mut grid = Vec::with_capacity(rows);
    for s in &zs {
        let t = model.generate(Domain::Target, &vec![s.clone(); cols], &zr)?;
        grid.push(tensor_images(&t)?);
    }
    composite(&grid)?.save_png(&out)?;
    let r = grid_nd(&grid, &Fbpd, &ColorHist(Region::Full))?;
    println!("{}\n{}", out.display(), r.to_csv());
    Ok(())
}
