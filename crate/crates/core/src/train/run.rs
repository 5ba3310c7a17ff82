use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{BatchSource, StepReport, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::Checkpoint;

pub const LOG_FILE: &str = "log.csv";
pub const LATEST_FILE: &str = "latest";
pub const CONFIG_FILE: &str = "config.txt";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step}.ckpt"))
}

/// Step number stored in the `latest` marker.
pub fn read_latest(dir: &Path) -> Result<u64> {
    let p = dir.join(LATEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("{}: not a step number: `{}`", p.display(), text.trim())))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Continue from the checkpoint named by `latest` instead of starting
    /// fresh.
    pub resume: bool,
}

pub struct RunOutcome {
    pub trainer: Trainer,
    /// Reports of the steps run by this call.
    pub reports: Vec<StepReport>,
    pub resumed_from: Option<u64>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save(trainer: &Trainer, dir: &Path) -> Result<()> {
    let step = trainer.step();
    trainer.to_checkpoint().save(&checkpoint_path(dir, step))?;
    write_file(&dir.join(LATEST_FILE), &format!("{step}\n"))
}

/// Log text up to and including `step`.
fn truncated_log(path: &Path, step: u64) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(StepReport::CSV_HEADER) {
        return Err(Error::Checkpoint(format!("{}: unexpected log header", path.display())));
    }
    let mut out = format!("{}\n", StepReport::CSV_HEADER);
    let mut expect = 1;
    for line in lines {
        let r = StepReport::parse_csv_row(line)?;
        if r.step > step {
            break;
        }
        if r.step != expect {
            return Err(Error::Checkpoint(format!(
                "{}: row for step {} where step {expect} was expected",
                path.display(),
                r.step
            )));
        }
        out.push_str(line);
        out.push('\n');
        expect += 1;
    }
    if expect != step + 1 {
        return Err(Error::Checkpoint(format!(
            "{}: log ends at step {}, checkpoint is at step {step}",
            path.display(),
            expect - 1
        )));
    }
    Ok(out)
}

/// Trains to `config.total_steps`, writing into `dir`:
/// `config.txt`, `log.csv` (one row per step), `step_<N>.ckpt` every
/// `checkpoint_every` steps and at the end, and the `latest` marker. A fresh
/// run first saves `step_0.ckpt`.
///
/// The two sources are read independently; nothing here sees how their
/// images correspond.
pub fn run_training(
    config: &TrainConfig,
    target: &mut dyn BatchSource,
    mut auxiliary: Option<&mut dyn BatchSource>,
    dir: &Path,
    opts: RunOptions,
) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    log::info!("run config:\n{}", config.to_text());
    let log_path = dir.join(LOG_FILE);

    let (mut trainer, log_text, resumed_from) = if opts.resume {
        let step = read_latest(dir)?;
        let ckpt = Checkpoint::load(&checkpoint_path(dir, step))?;
        if ckpt.step != step {
            return Err(Error::Checkpoint(format!(
                "`latest` names step {step} but the checkpoint holds step {}",
                ckpt.step
            )));
        }
        let trainer = Trainer::from_checkpoint(config.clone(), &ckpt)?;
        log::info!("resuming from step {step}");
        (trainer, truncated_log(&log_path, step)?, Some(step))
    } else {
        let trainer = Trainer::new(config.clone())?;
        save(&trainer, dir)?;
        (trainer, format!("{}\n", StepReport::CSV_HEADER), None)
    };
    write_file(&dir.join(CONFIG_FILE), &config.to_text())?;
    write_file(&log_path, &log_text)?;

    let file = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut out = BufWriter::new(file);
    let mut reports = Vec::new();
    while trainer.step() < config.total_steps {
        let report = match trainer.train_step(target, auxiliary.as_mut().map(|a| &mut **a as &mut dyn BatchSource)) {
            Ok(r) => r,
            Err(e) => {
                out.flush().map_err(|e| Error::io(&log_path, e))?;
                log::error!("training halted: {e}");
                return Err(e);
            }
        };
        writeln!(out, "{}", report.to_csv_row()).map_err(|e| Error::io(&log_path, e))?;
        let s = report.step;
        if s % 100 == 0 {
            log::info!(
                "step {s}: d_loss {:.4} g_loss {:.4} D_t(real) {:.3} D_t(fake) {:.3}",
                report.d.total,
                report.g.total,
                report.dt_real,
                report.dt_fake
            );
        }
        reports.push(report);
        if s % config.checkpoint_every == 0 || s == config.total_steps {
            out.flush().map_err(|e| Error::io(&log_path, e))?;
            save(&trainer, dir)?;
        }
    }
    out.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(RunOutcome {
        trainer,
        reports,
        resumed_from,
    })
}
