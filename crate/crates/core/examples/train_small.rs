//! A short training run on a small synthetic set, printing the loss log.
//!
//! ```text
//! cargo run --release --example train_small -- runs/small 200
//! ```

use std::path::PathBuf;

use dsrgan::data::build_dataset;
use dsrgan::train::{
    run_training, BatchSource, RunOptions, ShuffledStream, TrainConfig, AUXILIARY_STREAM,
    LATEST_FILE, TARGET_STREAM,
};

fn main() -> dsrgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/small".into()));
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = TrainConfig::parse(&format!(
        "widths = 16,16,8,8,4\ndisc_widths = 8,16,32\nbatch_size = 16\ntotal_steps = {steps}\ncheckpoint_every = 50\nseed = 0\n"
    ))?;
    let ds = build_dataset(500, 0, 32)?;
    let mut t = ShuffledStream::new(&ds.target, cfg.seed, TARGET_STREAM)?;
    let mut a = ShuffledStream::new(&ds.auxiliary, cfg.seed, AUXILIARY_STREAM)?;
    let resume = out.join(LATEST_FILE).exists();
    let run = run_training(&cfg, &mut t, Some(&mut a as &mut dyn BatchSource), &out, RunOptions { resume })?;
    if let Some(last) = run.reports.last() {
        println!("{}", last.to_csv_row());
    }
    println!("run directory {} at step {}", out.display(), run.trainer.step());
    Ok(())
}
