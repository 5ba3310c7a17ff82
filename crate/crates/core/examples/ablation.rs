//! Trains the full model and the `no_aux` ablation on the same synthetic set
//! and compares their ND (FBPD + full-image histogram).
//!
//! ```text
//! cargo run --release --example ablation -- --steps 2000 --seeds 0,1 --out runs/ablation
//! ```
//! Runs resume from their `latest` checkpoint when re-invoked.

use std::path::PathBuf;

use clap::Parser;
use dsrgan::data::build_dataset;
use dsrgan::metrics::{estimate_nd, ColorHist, Fbpd, Region};
use dsrgan::model::{Domain, ModelGenerator};
use dsrgan::train::{
    run_training, BatchSource, RunOptions, ShuffledStream, TrainConfig, AUXILIARY_STREAM,
    LATEST_FILE, TARGET_STREAM,
};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 5000)]
    images: usize,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value = "16,16,8,8,4")]
    widths: String,
    #[arg(long, default_value = "8,16,32")]
    disc_widths: String,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Extra `key = value` lines, `;`-separated.
    #[arg(long, default_value = "")]
    extra: String,
    #[arg(long, default_value = "runs/ablation")]
    out: PathBuf,
}

fn main() -> dsrgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let ds = build_dataset(args.images, 7, 32)?;
    for &seed in &args.seeds {
        let mut nds = Vec::new();
        for arm in ["", "no_aux"] {
            let text = format!(
                "widths = {}\ndisc_widths = {}\nbatch_size = {}\ntotal_steps = {}\nseed = {seed}\ncheckpoint_every = 1000\nablation = {arm}\n{}",
                args.widths,
                args.disc_widths,
                args.batch,
                args.steps,
                args.extra.replace(';', "\n")
            );
            let cfg = TrainConfig::parse(&text)?;
            let name = if arm.is_empty() { "full" } else { arm };
            let dir = args.out.join(format!("{name}_seed{seed}"));
            let mut t = ShuffledStream::new(&ds.target, seed, TARGET_STREAM)?;
            let mut a = ShuffledStream::new(&ds.auxiliary, seed, AUXILIARY_STREAM)?;
            let aux = (!cfg.model.ablations.no_aux).then_some(&mut a as &mut dyn BatchSource);
            let resume = dir.join(LATEST_FILE).exists();
            let out = run_training(&cfg, &mut t, aux, &dir, RunOptions { resume })?;
            let mut gen = ModelGenerator::new(out.trainer.into_model(), Domain::Target)?;
            let r = estimate_nd(&mut gen, &Fbpd, &ColorHist(Region::Full), args.pairs, 99)?;
            println!("seed {seed} {name}\n{}", r.to_text());
            nds.push(r.nd.value);
        }
        let ratio = if nds[1] > 0.0 { format!("{:.3}", nds[0] / nds[1]) } else { "n/a (no_aux ND <= 0)".into() };
        println!("seed {seed}: ND full {:.4}  no_aux {:.4}  ratio {ratio}", nds[0], nds[1]);
    }
    Ok(())
}
