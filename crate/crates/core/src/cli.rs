//! The `dsrgan` command line.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_dataset, load_domains, load_image_dir, tensor_images, Image, AUXILIARY_DIR, TARGET_DIR,
};
use crate::error::{Error, Result};
use crate::metrics::{
    data_baseline, estimate_nd, grid_nd, ColorHist, Distance, EmbeddingDistance, Fbpd, Hog,
    NdReport, StructureDistance,
};
use crate::model::{Checkpoint, Domain, Model, ModelGenerator};
use crate::train::{
    run_training, BatchSource, RunOptions, ShuffledStream, TrainConfig, Trainer, AUXILIARY_STREAM,
    CONFIG_FILE, TARGET_STREAM,
};

/// Gutter between cells of a composite grid, in pixels.
pub const GRID_GUTTER: usize = 2;
pub const GRID_FILE: &str = "grid.png";
pub const LATENTS_FILE: &str = "latents.csv";

#[derive(Parser, Debug)]
#[command(name = "dsrgan", version, about = "Structure/rendering GANs and the ND metric")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic two-domain dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train from a `key = value` config file.
    Train(TrainArgs),
    /// Sample a grid whose rows share z_s and whose columns share z_r.
    Grid(GridArgs),
    /// Estimate ND for a checkpoint or a directory of grid cells.
    EvalNd(EvalNdArgs),
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory with `target/` and `auxiliary/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the run's `latest` checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DomainArg {
    Target,
    Auxiliary,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Target => Domain::Target,
            DomainArg::Auxiliary => Domain::Auxiliary,
        }
    }
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "target")]
    pub domain: DomainArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["checkpoint", "grid_dir"]))]
pub struct EvalNdArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `r<i>_c<j>.png` cells.
    #[arg(long)]
    pub grid_dir: Option<PathBuf>,
    #[arg(long, default_value = "fbpd")]
    pub ds: String,
    #[arg(long, default_value = "hist")]
    pub dr: String,
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory; adds data-pair baseline rows from its image domain.
    #[arg(long)]
    pub baseline_data: Option<PathBuf>,
    /// `<stem>.png` + `<stem>.f64` pairs for `--ds embed`; defaults to the
    /// grid directory.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "target")]
    pub domain: DomainArg,
    /// Also write the report CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeDataset(a) => make_dataset(&a),
        Command::Train(a) => train(&a),
        Command::Grid(a) => grid(&a),
        Command::EvalNd(a) => eval_nd(&a),
    }
}

fn is_non_empty_dir(p: &Path) -> bool {
    fs::read_dir(p).is_ok_and(|mut it| it.next().is_some())
}

pub fn make_dataset(a: &MakeDatasetArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    if is_non_empty_dir(&a.out) && !a.force {
        return Err(Error::InvalidArgument(format!(
            "{} is not empty (use --force to write into it)",
            a.out.display()
        )));
    }
    let ds = build_dataset(a.count, a.seed, a.size)?;
    let manifest = ds.write(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let cfg = TrainConfig::parse(&text)?;
    let (target, auxiliary) = if cfg.model.ablations.no_aux {
        (load_image_dir(&a.data.join(TARGET_DIR))?, Vec::new())
    } else {
        load_domains(&a.data)?
    };
    for (name, imgs) in [(TARGET_DIR, &target), (AUXILIARY_DIR, &auxiliary)] {
        if let Some(img) = imgs.iter().find(|i| i.width() != cfg.model.resolution || i.height() != cfg.model.resolution) {
            return Err(Error::Config(format!(
                "{name} images are {}x{} but resolution = {}",
                img.width(),
                img.height(),
                cfg.model.resolution
            )));
        }
    }
    let mut t = ShuffledStream::new(&target, cfg.seed, TARGET_STREAM)?;
    let mut aux = if cfg.model.ablations.no_aux {
        None
    } else {
        Some(ShuffledStream::new(&auxiliary, cfg.seed, AUXILIARY_STREAM)?)
    };
    let out = run_training(
        &cfg,
        &mut t,
        aux.as_mut().map(|s| s as &mut dyn BatchSource),
        &a.out,
        RunOptions { resume: a.resume },
    )?;
    println!("trained to step {} in {}", out.trainer.step(), a.out.display());
    Ok(())
}

/// Loads a checkpoint together with the `config.txt` of its run directory.
pub fn load_checkpoint_model(path: &Path) -> Result<Model> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg = TrainConfig::parse(&text)?;
    let ckpt = Checkpoint::load(path)?;
    Ok(Trainer::from_checkpoint(cfg, &ckpt)?.into_model())
}

/// Row latents (`z_s`) then column latents (`z_r`), uniform in [-1, 1].
pub fn grid_latents(seed: u64, rows: usize, cols: usize, ds: usize, dr: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n, d| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
    };
    let zs = draw(rows, ds);
    let zr = draw(cols, dr);
    (zs, zr)
}

pub fn cell_name(row: usize, col: usize) -> String {
    format!("r{row}_c{col}.png")
}

/// Cells separated by a white gutter of `GRID_GUTTER` pixels.
pub fn composite(grid: &[Vec<Image>]) -> Result<Image> {
    let first = grid
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
    let (w, h) = (first.width(), first.height());
    let (rows, cols) = (grid.len(), grid[0].len());
    let mut out = Image::solid(
        cols * w + (cols - 1) * GRID_GUTTER,
        rows * h + (rows - 1) * GRID_GUTTER,
        [1.0; 3],
    );
    for (i, row) in grid.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            first.same_dims(cell)?;
            let (ox, oy) = (j * (w + GRID_GUTTER), i * (h + GRID_GUTTER));
            for y in 0..h {
                for x in 0..w {
                    out.set_pixel(ox + x, oy + y, cell.pixel(x, y));
                }
            }
        }
    }
    Ok(out)
}

fn latent_line(kind: &str, index: usize, z: &[f64]) -> String {
    let vals: Vec<String> = z.iter().map(|v| v.to_string()).collect();
    format!("{kind},{index},{}\n", vals.join(","))
}

pub fn grid(a: &GridArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::InvalidArgument("--rows and --cols must be at least 1".into()));
    }
    let mut model = load_checkpoint_model(&a.checkpoint)?;
    let domain = Domain::from(a.domain);
    if !model.has_domain(domain) {
        return Err(Error::InvalidArgument(format!("the checkpoint has no {domain} generator")));
    }
    let (ds, dr) = (model.config().ds_dim, model.config().dr_dim);
    let (zs, zr) = grid_latents(a.seed, a.rows, a.cols, ds, dr);
    let mut grid = Vec::with_capacity(a.rows);
    for s in &zs {
        let t = model.generate(domain, &vec![s.clone(); a.cols], &zr)?;
        grid.push(tensor_images(&t)?);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (i, row) in grid.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            cell.save_png(&a.out.join(cell_name(i, j)))?;
        }
    }
    composite(&grid)?.save_png(&a.out.join(GRID_FILE))?;
    let mut log = String::new();
    for (i, z) in zs.iter().enumerate() {
        log.push_str(&latent_line("zs", i, z));
    }
    for (j, z) in zr.iter().enumerate() {
        log.push_str(&latent_line("zr", j, z));
    }
    let p = a.out.join(LATENTS_FILE);
    fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    println!("{}", a.out.join(GRID_FILE).display());
    Ok(())
}

/// Reads `r<i>_c<j>.png` cells into a row-major grid.
pub fn load_grid_dir(dir: &Path) -> Result<Vec<Vec<Image>>> {
    let mut cells = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.filter_map(|e| e.ok()) {
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".png") else { continue };
        let Some((r, c)) = stem.strip_prefix('r').and_then(|s| s.split_once("_c")) else { continue };
        if let (Ok(r), Ok(c)) = (r.parse::<usize>(), c.parse::<usize>()) {
            cells.push((r, c, entry.path()));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    let rows = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let cols = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    if cells.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{}: {} cells do not fill a {rows}x{cols} grid",
            dir.display(),
            cells.len()
        )));
    }
    cells.sort();
    let mut grid: Vec<Vec<Image>> = vec![Vec::with_capacity(cols); rows];
    for (r, _, p) in cells {
        grid[r].push(Image::load(&p)?);
    }
    Ok(grid)
}

fn structure_distance(a: &EvalNdArgs) -> Result<Box<dyn Distance>> {
    Ok(match a.ds.parse::<StructureDistance>()? {
        StructureDistance::Hog => Box::new(Hog),
        StructureDistance::Fbpd => Box::new(Fbpd),
        StructureDistance::Embed => {
            let dir = a.features.as_ref().or(a.grid_dir.as_ref()).ok_or_else(|| {
                Error::Config("--ds embed needs --features (a directory of <stem>.f64 files)".into())
            })?;
            Box::new(EmbeddingDistance::from_dir(dir)?)
        }
    })
}

pub fn eval_nd_report(a: &EvalNdArgs) -> Result<NdReport> {
    let d_s = structure_distance(a)?;
    let d_r: ColorHist = a.dr.parse()?;
    let mut report = match (&a.checkpoint, &a.grid_dir) {
        (Some(ck), None) => {
            let mut gen = ModelGenerator::new(load_checkpoint_model(ck)?, a.domain.into())?;
            estimate_nd(&mut gen, d_s.as_ref(), &d_r, a.pairs, a.seed)?
        }
        (None, Some(dir)) => grid_nd(&load_grid_dir(dir)?, d_s.as_ref(), &d_r)?,
        _ => {
            return Err(Error::InvalidArgument(
                "give exactly one of --checkpoint and --grid-dir".into(),
            ))
        }
    };
    if let Some(data) = &a.baseline_data {
        let sub = match a.domain {
            DomainArg::Target => TARGET_DIR,
            DomainArg::Auxiliary => AUXILIARY_DIR,
        };
        let images = load_image_dir(&data.join(sub))?;
        report.baseline = Some(data_baseline(&images, d_s.as_ref(), &d_r, a.pairs, a.seed)?);
    }
    Ok(report)
}

pub fn eval_nd(a: &EvalNdArgs) -> Result<()> {
    let csv = eval_nd_report(a)?.to_csv();
    if let Some(p) = &a.out {
        fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
    }
    std::io::stdout()
        .write_all(csv.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}
