//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Criterion 8 trains three seeds of two arms for 20,000 steps. Runs live in
//! `target/acceptance/ablation` (or `$DSRGAN_ACCEPTANCE_DIR`) and are resumed
//! from their last checkpoint, so a completed protocol is only re-evaluated.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsrgan::autodiff::{check_gradients_multi, op_cases, BnMode, GradCheckOptions, Graph, Tensor, Var};
use dsrgan::data::{build_dataset, Image};
use dsrgan::metrics::{
    data_baseline, estimate_nd, fbpd_distance, grid_nd, hsv_histogram, toy_grid, bin_index,
    ColorHist, Distance, Diversity, EmbeddingDistance, Fbpd, Hog, LatentGenerator,
    ProceduralGenerator, Region, Tie, HIST_LEN, HUE_BINS, SAT_BINS, VAL_BINS,
};
use dsrgan::model::{Checkpoint, Domain, Model, ModelGenerator, Session};
use dsrgan::train::{
    checkpoint_path, forward_losses, run_training, BatchSource, Latents, RunOptions,
    ShuffledStream, StepBatch, TrainConfig, AUXILIARY_STREAM, LATEST_FILE, LOG_FILE,
    TARGET_STREAM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn() -> dsrgan::Result<Outcome>;

// ---------------------------------------------------------------- 1

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 10;

fn grad_model_config(seed: u64) -> TrainConfig {
    TrainConfig::parse(&format!(
        "resolution = 8\nds_dim = 4\ndr_dim = 2\nwidths = 4,4,4,4\ndisc_widths = 4,4,4\n\
         batch_size = 4\nlambda1 = 0.7\nlambda2 = 1.3\nmu1 = 0.9\nmu2 = 1.1\nseed = {seed}\n"
    ))
    .expect("valid config")
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .expect("shape matches length")
}

/// Finite-difference oracle for the composed objectives: Richardson-extrapolated
/// central differences, shrinking the step whenever a probe changes the side
/// of any relu/abs/clamp kink.
fn composed_opts() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-3,
        extrapolate: true,
        ..GradCheckOptions::default()
    }
}

struct LossCheck {
    worst: f64,
    checked: usize,
    at: String,
}

/// Checks the discriminator and generator objectives with respect to every
/// parameter at a generic point: batch-norm scales and shifts are drawn
/// away from their 1/0 initial values, so no unit sits exactly on a kink.
fn composed_loss_check(seed: u64) -> dsrgan::Result<LossCheck> {
    let cfg = grad_model_config(seed);
    let mut model = Model::new(cfg.model.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = StepBatch {
        target: random_tensor(&[4, 3, 8, 8], &mut rng),
        auxiliary: Some(random_tensor(&[4, 3, 8, 8], &mut rng)),
        latents: Latents::sample(4, 4, 2, &mut rng),
    };
    for p in model.params_mut() {
        let base = if p.name.ends_with(".gamma") {
            1.0
        } else if p.name.ends_with(".beta") {
            0.0
        } else {
            continue;
        };
        for v in p.value.data_mut() {
            *v = base + rng.random_range(-0.3..=0.3);
        }
    }
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let params: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let reports = check_gradients_multi(&params, composed_opts(), |g: &mut Graph, v: &[Var]| {
        let mut s = Session::with_params(g, &mut model, v, BnMode::Train)?;
        let lv = forward_losses(&mut s, &batch, &cfg, false)?;
        Ok(vec![lv.d_total, lv.g_total])
    })?;
    let mut out = LossCheck { worst: 0.0, checked: 0, at: String::new() };
    for (r, obj) in reports.iter().zip(["d_loss", "g_loss"]) {
        out.checked += r.checked;
        if r.max_rel_err >= out.worst {
            out.worst = r.max_rel_err;
            out.at = format!(
                "{obj} wrt {}[{}]: analytic {:.6e}, numeric {:.6e}",
                names[r.worst.0], r.worst.1, r.worst_analytic, r.worst_numeric
            );
        }
    }
    Ok(out)
}

fn c1_gradients() -> dsrgan::Result<Outcome> {
    let mut op_worst: f64 = 0.0;
    let mut op_name = "";
    for seed in 0..GRAD_SEEDS {
        for mut case in op_cases(seed) {
            let r = case.check(GradCheckOptions::default())?;
            if r.max_rel_err > op_worst {
                op_worst = r.max_rel_err;
                op_name = case.name;
            }
        }
    }
    let mut loss_worst: f64 = 0.0;
    let mut entries = 0;
    let mut failing = Vec::new();
    for seed in 0..GRAD_SEEDS {
        let c = composed_loss_check(seed)?;
        loss_worst = loss_worst.max(c.worst);
        entries += c.checked;
        if c.worst >= GRAD_TOL {
            failing.push(format!("seed {seed} {:.2e} at {}", c.worst, c.at));
        }
    }
    Ok(outcome(
        op_worst < GRAD_TOL && failing.is_empty(),
        format!(
            "{GRAD_SEEDS} seeds; worst op rel err {op_worst:.2e} ({op_name}); composed loss worst {loss_worst:.2e} over {entries} entries (tol {GRAD_TOL:e}){}",
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join("; ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 2

fn noise_image(rng: &mut ChaCha8Rng) -> Image {
    let data = (0..32 * 32 * 3).map(|_| f64::from(rng.random_range(0u8..=255)) / 255.0).collect();
    Image::new(32, 32, data).expect("valid image")
}

fn c2_axioms() -> dsrgan::Result<Outcome> {
    let ds = build_dataset(1000, 2024, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<(Image, Image)> = (0..1000)
        .map(|i| match i % 4 {
            0 => (noise_image(&mut rng), noise_image(&mut rng)),
            1 => (ds.target[i].clone(), noise_image(&mut rng)),
            2 => (ds.target[i].clone(), ds.auxiliary[(i * 7) % 1000].clone()),
            _ => (ds.target[i].clone(), ds.target[(i * 13 + 1) % 1000].clone()),
        })
        .collect();
    let mut embed = EmbeddingDistance::default();
    for (a, b) in &pairs {
        for img in [a, b] {
            embed.insert(img, (0..16).map(|_| rng.random_range(-1.0..=1.0)).collect());
        }
    }
    let dists: Vec<Box<dyn Distance>> = vec![
        Box::new(Hog),
        Box::new(Fbpd),
        Box::new(ColorHist(Region::Full)),
        Box::new(ColorHist(Region::UpperThird)),
        Box::new(embed),
    ];
    let mut bad = Vec::new();
    for d in &dists {
        let mut fails = 0;
        for (a, b) in &pairs {
            let (ab, ba) = (d.distance(a, b)?, d.distance(b, a)?);
            let (aa, bb) = (d.distance(a, a)?, d.distance(b, b)?);
            if aa != 0.0 || bb != 0.0 || ab != ba || !(0.0..=1.0).contains(&ab) {
                fails += 1;
            }
        }
        if fails > 0 {
            bad.push(format!("{}: {fails} violations", d.name()));
        }
    }
    let names: Vec<String> = dists.iter().map(|d| d.name()).collect();
    Ok(outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("1000 pairs, {} distances: identity, symmetry and range exact", names.join("/"))
        } else {
            bad.join("; ")
        },
    ))
}

// ---------------------------------------------------------------- 3

fn c3_histogram() -> dsrgan::Result<Outcome> {
    let mut notes = Vec::new();
    let layout = (HUE_BINS, SAT_BINS, VAL_BINS, HIST_LEN) == (18, 8, 8, 1152);
    if !layout {
        notes.push(format!("layout {HUE_BINS}x{SAT_BINS}x{VAL_BINS}={HIST_LEN}"));
    }
    let red = hsv_histogram(&Image::solid(32, 32, [1.0, 0.0, 0.0]), Region::Full)?;
    let red_ok = red.len() == 1152 && red[bin_index(0, 7, 7)] == 1.0;
    if !red_ok {
        notes.push("pure red not in bin (0,7,7)".into());
    }
    let mut gray_ok = true;
    for level in [0u8, 40, 128, 200, 255] {
        let v = f64::from(level) / 255.0;
        let h = hsv_histogram(&Image::solid(32, 32, [v; 3]), Region::Full)?;
        let vbin = ((v * 8.0).floor() as usize).min(7);
        gray_ok &= h[bin_index(0, 0, vbin)] == 1.0;
    }
    if !gray_ok {
        notes.push("gray not in (0,0,v)".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let img = noise_image(&mut rng);
        for region in [Region::Full, Region::UpperThird] {
            worst = worst.max((hsv_histogram(&img, region)?.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let mass_ok = worst <= 1e-12;
    Ok(outcome(
        layout && red_ok && gray_ok && mass_ok,
        format!(
            "18x8x8 = {HIST_LEN} bins; red -> (0,7,7); gray -> (0,0,v); max |sum - 1| = {worst:.1e}{}",
            if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn square(size: usize, x0: usize, y0: usize, w: usize, h: usize) -> Image {
    let mut img = Image::white(size);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            img.set_pixel(x, y, [0.1, 0.3, 0.6]);
        }
    }
    img
}

fn c4_fbpd() -> dsrgan::Result<Outcome> {
    // 10x10 = 100 foreground pixels containing a 10x5 = 50 pixel rectangle
    let nested = fbpd_distance(&square(32, 4, 4, 10, 10), &square(32, 4, 4, 10, 5))?;
    let disjoint = fbpd_distance(&square(32, 0, 0, 8, 8), &square(32, 20, 20, 8, 8))?;
    // gray 250 is background, 249 is foreground
    let level = |v: u8| Image::solid(32, 32, [f64::from(v) / 255.0; 3]);
    let band_bg = fbpd_distance(&level(250), &Image::white(32))?;
    let band_fg = fbpd_distance(&level(249), &Image::white(32))?;
    let ok = nested == 0.5 && disjoint == 1.0 && band_bg == 0.0 && band_fg == 1.0;
    Ok(outcome(
        ok,
        format!("nested {nested}, disjoint {disjoint}, gray 250 vs white {band_bg}, gray 249 vs white {band_fg}"),
    ))
}

// ---------------------------------------------------------------- 5

const PAIRS: usize = 2000;

fn c5_degenerate() -> dsrgan::Result<Outcome> {
    let (ds, dr) = (Fbpd, ColorHist(Region::Full));
    let c = estimate_nd(&mut ProceduralGenerator::new(32, Tie::Constant), &ds, &dr, PAIRS, 5)?;
    let ign_r = estimate_nd(&mut ProceduralGenerator::new(32, Tie::IgnoreZr), &ds, &dr, PAIRS, 6)?;
    let ign_s = estimate_nd(&mut ProceduralGenerator::new(32, Tie::IgnoreZs), &ds, &dr, PAIRS, 7)?;
    let constant_ok = c.nd.value == 0.0;
    let r_ok = ign_r.delta_dr.value.abs() < 2.0 * ign_r.delta_dr.std_error;
    let s_ok = ign_s.delta_ds.value.abs() < 2.0 * ign_s.delta_ds.std_error;
    Ok(outcome(
        constant_ok && r_ok && s_ok,
        format!(
            "constant ND {}; z_r ignored: delta_dr {:.4} (se {:.4}, E_dr_vary_r {}); z_s ignored: delta_ds {:.4} (se {:.4}, E_ds_vary_s {})",
            c.nd.value,
            ign_r.delta_dr.value,
            ign_r.delta_dr.std_error,
            ign_r.e_dr_vary_r.value,
            ign_s.delta_ds.value,
            ign_s.delta_ds.std_error,
            ign_s.e_ds_vary_s.value,
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn c6_toy_grids() -> dsrgan::Result<Outcome> {
    let (ds, dr) = (Fbpd, ColorHist(Region::Full));
    let mut ordered = 0;
    let mut example = String::new();
    for seed in 0..10 {
        let nd = |s, c| -> dsrgan::Result<f64> { Ok(grid_nd(&toy_grid(s, c, 4, 4, 32, seed), &ds, &dr)?.nd.value) };
        let a = nd(Diversity::Low, Diversity::Low)?;
        let b = nd(Diversity::Low, Diversity::High)?;
        let c = nd(Diversity::High, Diversity::Low)?;
        let d = nd(Diversity::High, Diversity::High)?;
        if d > b && b > a && d > c && c > a {
            ordered += 1;
        }
        if seed == 0 {
            example = format!("seed 0: a {a:.3}, b {b:.3}, c {c:.3}, d {d:.3}");
        }
    }
    Ok(outcome(ordered == 10, format!("{ordered}/10 constructions ordered; {example}")))
}

// ---------------------------------------------------------------- 7

fn c7_ideal_ceiling() -> dsrgan::Result<Outcome> {
    let (ds, dr) = (Fbpd, ColorHist(Region::Full));
    let mut gen = ProceduralGenerator::new(32, Tie::Ideal);
    let report = estimate_nd(&mut gen, &ds, &dr, PAIRS, 77)?;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let draw = |rng: &mut ChaCha8Rng, d: usize| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let (zs, zr): (Vec<_>, Vec<_>) = (0..PAIRS)
        .map(|_| (draw(&mut rng, gen.zs_dim()), draw(&mut rng, gen.zr_dim())))
        .unzip();
    let images = gen.generate(&zs, &zr)?;
    let base = data_baseline(&images, &ds, &dr, PAIRS, 79)?;
    let bound = 0.8 * (base.e_ds_data.value + base.e_dr_data.value);
    Ok(outcome(
        report.nd.value >= bound,
        format!(
            "ND {:.4} vs 0.8 x ({:.4} + {:.4}) = {bound:.4}",
            report.nd.value, base.e_ds_data.value, base.e_dr_data.value
        ),
    ))
}

// ---------------------------------------------------------------- 8

const ABLATION_STEPS: u64 = 20_000;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_IMAGES: usize = 5000;
const ABLATION_DATA_SEED: u64 = 7;
const ABLATION_EVAL_SEED: u64 = 99;
const ABLATION_RATIO: f64 = 1.2;

fn ablation_config(arm: &str, seed: u64) -> TrainConfig {
    TrainConfig::parse(&format!(
        "widths = 16,16,8,8,4\ndisc_widths = 8,16,32\nbatch_size = 16\ntotal_steps = {ABLATION_STEPS}\n\
         seed = {seed}\ncheckpoint_every = 1000\nablation = {arm}\n"
    ))
    .expect("valid config")
}

fn ablation_dir() -> PathBuf {
    std::env::var_os("DSRGAN_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance/ablation")
    })
}

/// `full / no_aux`, defined only for a positive `no_aux` ND. Otherwise a
/// positive full ND counts as unbounded improvement and a non-positive one as
/// none at all.
fn nd_ratio(full: f64, no_aux: f64) -> f64 {
    if no_aux > 0.0 {
        full / no_aux
    } else if full > 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

fn c8_ablation() -> dsrgan::Result<Outcome> {
    let data = build_dataset(ABLATION_IMAGES, ABLATION_DATA_SEED, 32)?;
    let root = ablation_dir();
    let mut ratios = Vec::new();
    let mut lines = Vec::new();
    for seed in ABLATION_SEEDS {
        let mut nd = Vec::new();
        for (arm, name) in [("", "full"), ("no_aux", "no_aux")] {
            let cfg = ablation_config(arm, seed);
            let dir = root.join(format!("{name}_seed{seed}"));
            let mut t = ShuffledStream::new(&data.target, seed, TARGET_STREAM)?;
            let mut a = ShuffledStream::new(&data.auxiliary, seed, AUXILIARY_STREAM)?;
            let aux = (!cfg.model.ablations.no_aux).then_some(&mut a as &mut dyn BatchSource);
            let resume = dir.join(LATEST_FILE).exists();
            let out = run_training(&cfg, &mut t, aux, &dir, RunOptions { resume })?;
            let mut gen = ModelGenerator::new(out.trainer.into_model(), Domain::Target)?;
            let r = estimate_nd(&mut gen, &Fbpd, &ColorHist(Region::Full), PAIRS, ABLATION_EVAL_SEED)?;
            nd.push(r.nd);
        }
        ratios.push(nd_ratio(nd[0].value, nd[1].value));
        lines.push(format!(
            "seed {seed}: full {:.4}+-{:.4} no_aux {:.4}+-{:.4}",
            nd[0].value, nd[0].std_error, nd[1].value, nd[1].std_error
        ));
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    Ok(outcome(
        median >= ABLATION_RATIO,
        format!("median full/no_aux ND ratio {median:.3} (need >= {ABLATION_RATIO}); {}", lines.join("; ")),
    ))
}

// ---------------------------------------------------------------- 9, 10

fn small_config(steps: u64) -> TrainConfig {
    TrainConfig::parse(&format!(
        "ds_dim = 8\ndr_dim = 4\nwidths = 8,8,8,4,4\ndisc_widths = 4,8,8\nbatch_size = 8\n\
         total_steps = {steps}\ncheckpoint_every = 25\nseed = 11\n"
    ))
    .expect("valid config")
}

fn train_small(steps: u64, dir: &Path, resume: bool) -> dsrgan::Result<()> {
    let data = build_dataset(200, 3, 32)?;
    let cfg = small_config(steps);
    let mut t = ShuffledStream::new(&data.target, cfg.seed, TARGET_STREAM)?;
    let mut a = ShuffledStream::new(&data.auxiliary, cfg.seed, AUXILIARY_STREAM)?;
    run_training(&cfg, &mut t, Some(&mut a), dir, RunOptions { resume })?;
    Ok(())
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn c9_determinism() -> dsrgan::Result<Outcome> {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    train_small(60, a.path(), false)?;
    train_small(60, b.path(), false)?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    let same = fa == fb;
    Ok(outcome(
        same,
        format!("60 steps twice: {} files ({}), {}", fa.len(), fa.iter().map(|f| f.0.as_str()).collect::<Vec<_>>().join(" "), if same { "bit-identical" } else { "differ" }),
    ))
}

fn c10_round_trip() -> dsrgan::Result<Outcome> {
    let full = tempfile::tempdir().expect("tempdir");
    let split = tempfile::tempdir().expect("tempdir");
    train_small(100, full.path(), false)?;
    train_small(50, split.path(), false)?;
    train_small(100, split.path(), true)?;

    let path = checkpoint_path(full.path(), 100);
    let bytes = fs::read(&path).map_err(|e| dsrgan::Error::Checkpoint(e.to_string()))?;
    let loaded = Checkpoint::load(&path)?;
    let resaved = loaded.to_bytes();
    let model = {
        let mut m = Model::new(small_config(100).model, 0)?;
        m.import_tensors(&loaded)?;
        m
    };
    let reexported = model.export_tensors();
    let params_back = reexported.iter().all(|(n, t)| loaded.get(n).is_some_and(|l| l == t));
    let byte_same = resaved == bytes;

    let log_same = fs::read(full.path().join(LOG_FILE)).ok() == fs::read(split.path().join(LOG_FILE)).ok();
    let ck_same = files(full.path()) == files(split.path());
    Ok(outcome(
        byte_same && params_back && log_same && ck_same,
        format!(
            "save-load-save {}; model import/export {}; resume 50->100 log {}, run dir {}",
            if byte_same { "byte-identical" } else { "differs" },
            if params_back { "exact" } else { "differs" },
            if log_same { "matches row-for-row" } else { "differs" },
            if ck_same { "identical" } else { "differs" },
        ),
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient correctness", c1_gradients),
        ("metric axioms", c2_axioms),
        ("histogram conformance", c3_histogram),
        ("FBPD conformance", c4_fbpd),
        ("degenerate-generator identities", c5_degenerate),
        ("toy-grid ordering", c6_toy_grids),
        ("ideal-ceiling oracle", c7_ideal_ceiling),
        ("ablation trend", c8_ablation),
        ("determinism", c9_determinism),
        ("checkpoint round-trip", c10_round_trip),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.strip_prefix('c').and_then(|n| n.parse().ok()))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!("[{}] criterion {id} {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
