use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsrgan::cli::{load_checkpoint_model, GRID_FILE, GRID_GUTTER, LATENTS_FILE};
use dsrgan::data::{tensor_images, Image, MANIFEST_FILE};
use dsrgan::model::Domain;
use dsrgan::train::{checkpoint_path, TrainConfig, Trainer, CONFIG_FILE, LOG_FILE};

const TINY: &str = "ds_dim = 4\ndr_dim = 2\nwidths = 4,4,4,4,4\ndisc_widths = 4,4,4\nbatch_size = 4\n\
                    total_steps = 10\ncheckpoint_every = 5\nseed = 1\n";

fn dsrgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsrgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn make_data(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("data");
    let o = dsrgan(&["make-dataset", "--out", p(&data), "--count", &count.to_string(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    data
}

fn train(dir: &Path, data: &Path, config: &str, name: &str) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{name}.txt"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(name);
    (dsrgan(&["train", "--config", p(&cfg), "--data", p(data), "--out", p(&out)]), out)
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().filter_map(|e| e.ok()) {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn make_dataset_writes_both_domains_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("a");
    let o = dsrgan(&["make-dataset", "--out", p(&data), "--count", "100", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).trim().ends_with(MANIFEST_FILE));
    for sub in ["target", "auxiliary"] {
        assert_eq!(fs::read_dir(data.join(sub)).unwrap().count(), 100);
    }
    assert_eq!(fs::read_to_string(data.join(MANIFEST_FILE)).unwrap().lines().count(), 100);

    let again = dir.path().join("b");
    dsrgan(&["make-dataset", "--out", p(&again), "--count", "100", "--seed", "3"]);
    assert_eq!(tree(&data), tree(&again));
}

#[test]
fn make_dataset_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(dsrgan(&["make-dataset", "--out", p(&out), "--count", "0"]).status.code(), Some(2));
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep"), "x").unwrap();
    let o = dsrgan(&["make-dataset", "--out", p(&out), "--count", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert_eq!(dsrgan(&["make-dataset", "--out", p(&out), "--count", "2", "--force"]).status.code(), Some(0));
    assert_eq!(dsrgan(&["make-dataset", "--count", "2"]).status.code(), Some(2));
    assert_eq!(dsrgan(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_smoke_run_logs_every_step_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), 24);
    let (o, run) = train(dir.path(), &data, TINY, "run1");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = fs::read_to_string(run.join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 11);
    let snapshot = fs::read_to_string(run.join(CONFIG_FILE)).unwrap();
    assert_eq!(TrainConfig::parse(&snapshot).unwrap(), TrainConfig::parse(TINY).unwrap());
    for s in [0, 5, 10] {
        assert!(checkpoint_path(&run, s).exists());
    }
    let (_, run2) = train(dir.path(), &data, TINY, "run2");
    assert_eq!(log, fs::read_to_string(run2.join(LOG_FILE)).unwrap());
}

#[test]
fn train_config_errors_exit_two_naming_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), 8);
    let (o, _) = train(dir.path(), &data, &format!("{TINY}learning_rate = 0.1\n"), "bad");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let (o, _) = train(dir.path(), &data, &format!("{TINY}ablation = no_aux,no_aux\n"), "dup");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let short = TINY.replace("total_steps = 10", "total_steps = 2");
    for (name, ab) in [("a", "no_pra,no_progressive"), ("b", "no_progressive")] {
        let (o, _) = train(dir.path(), &data, &format!("{short}ablation = {ab}\n"), name);
        assert_eq!(o.status.code(), Some(0), "{ab}: {}", stderr(&o));
    }
    let (o, _) = train(dir.path(), &data, &format!("{short}resolution = 64\n"), "res");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn trained_run(dir: &Path) -> PathBuf {
    let data = make_data(dir, 16);
    let short = TINY.replace("total_steps = 10", "total_steps = 3");
    let (o, run) = train(dir, &data, &short, "run");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    run
}

fn latent_rows(text: &str, kind: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| l.starts_with(&format!("{kind},")))
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn grid_emits_cells_composite_and_reproducible_latents() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path());
    let ck = checkpoint_path(&run, 3);
    let out = dir.path().join("grid");
    let o = dsrgan(&["grid", "--checkpoint", p(&ck), "--rows", "3", "--cols", "2", "--seed", "9", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let comp = Image::load(&out.join(GRID_FILE)).unwrap();
    assert_eq!((comp.width(), comp.height()), (2 * 32 + GRID_GUTTER, 3 * 32 + 2 * GRID_GUTTER));
    for y in 0..comp.height() {
        for g in 0..GRID_GUTTER {
            assert_eq!(comp.pixel(32 + g, y), [1.0; 3]);
        }
    }

    let latents = fs::read_to_string(out.join(LATENTS_FILE)).unwrap();
    let (zs, zr) = (latent_rows(&latents, "zs"), latent_rows(&latents, "zr"));
    assert_eq!((zs.len(), zr.len()), (3, 2));
    let mut model = load_checkpoint_model(&ck).unwrap();
    for (i, s) in zs.iter().enumerate() {
        let t = model.generate(Domain::Target, &vec![s.clone(); 2], &zr).unwrap();
        for (j, img) in tensor_images(&t).unwrap().iter().enumerate() {
            let cell = Image::load(&out.join(format!("r{i}_c{j}.png"))).unwrap();
            assert_eq!(cell.to_u8(), img.to_u8(), "cell r{i}_c{j}");
            let tl = comp.pixel(j * (32 + GRID_GUTTER), i * (32 + GRID_GUTTER));
            assert_eq!(tl, cell.pixel(0, 0));
        }
    }

    let single = dir.path().join("one");
    let o = dsrgan(&["grid", "--checkpoint", p(&ck), "--rows", "1", "--cols", "1", "--out", p(&single)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let one = Image::load(&single.join(GRID_FILE)).unwrap();
    assert_eq!(one, Image::load(&single.join("r0_c0.png")).unwrap());
}

#[test]
fn grid_refuses_checkpoint_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path());
    let cfg = fs::read_to_string(run.join(CONFIG_FILE)).unwrap();
    fs::write(run.join(CONFIG_FILE), cfg.replace("dr_dim = 2", "dr_dim = 3")).unwrap();
    let o = dsrgan(&["grid", "--checkpoint", p(&checkpoint_path(&run, 3)), "--out", p(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
}

fn csv_terms(text: &str) -> Vec<(String, f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

fn term(rows: &[(String, f64, f64)], name: &str) -> (f64, f64) {
    rows.iter().find(|r| r.0 == name).map(|r| (r.1, r.2)).unwrap()
}

#[test]
fn eval_nd_constant_checkpoint_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::parse(TINY).unwrap();
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    for v in tr.model_mut().param_mut("g_rt.out.k").unwrap().data_mut() {
        *v = 0.0;
    }
    let run = dir.path().join("const");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join(CONFIG_FILE), cfg.to_text()).unwrap();
    let ck = checkpoint_path(&run, 0);
    tr.to_checkpoint().save(&ck).unwrap();
    let o = dsrgan(&["eval-nd", "--checkpoint", p(&ck), "--pairs", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_terms(&String::from_utf8_lossy(&o.stdout));
    let (nd, se) = term(&rows, "ND");
    assert!(nd.abs() <= 2.0 * se, "ND {nd} se {se}");
}

#[test]
fn eval_nd_identical_grid_is_exactly_zero() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::solid(32, 32, [0.2, 0.5, 0.9]);
    for i in 0..3 {
        for j in 0..3 {
            img.save_png(&dir.path().join(format!("r{i}_c{j}.png"))).unwrap();
        }
    }
    let out = dir.path().join("nd.csv");
    let o = dsrgan(&["eval-nd", "--grid-dir", p(dir.path()), "--ds", "hog", "--dr", "hist13", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), String::from_utf8_lossy(&o.stdout));
    assert_eq!(term(&csv_terms(&String::from_utf8_lossy(&o.stdout)), "ND").0, 0.0);
}

#[test]
fn eval_nd_estimates_agree_across_pair_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path());
    let ck = checkpoint_path(&run, 3);
    let data = dir.path().join("data");
    let small = dsrgan(&["eval-nd", "--checkpoint", p(&ck), "--pairs", "2000", "--seed", "1", "--baseline-data", p(&data)]);
    let big = dsrgan(&["eval-nd", "--checkpoint", p(&ck), "--pairs", "8000", "--seed", "2"]);
    assert_eq!(small.status.code(), Some(0), "{}", stderr(&small));
    let (a, b) = (csv_terms(&String::from_utf8_lossy(&small.stdout)), csv_terms(&String::from_utf8_lossy(&big.stdout)));
    assert!(a.iter().any(|r| r.0 == "E_ds_data") && a.iter().any(|r| r.0 == "E_dr_data"));
    for name in ["E_ds_vary_s", "E_ds_vary_r", "E_dr_vary_r", "E_dr_vary_s"] {
        let ((va, sa), (vb, sb)) = (term(&a, name), term(&b, name));
        let tol = 3.0 * (sa * sa + sb * sb).sqrt();
        assert!((va - vb).abs() <= tol, "{name}: {va} vs {vb} (tol {tol})");
    }
}

#[test]
fn eval_nd_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    Image::white(32).save_png(&dir.path().join("r0_c0.png")).unwrap();
    let g = p(dir.path());
    let o = dsrgan(&["eval-nd", "--grid-dir", g, "--ds", "embed"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(dsrgan(&["eval-nd", "--ds", "fbpd"]).status.code(), Some(2));
    assert_eq!(dsrgan(&["eval-nd", "--grid-dir", g, "--checkpoint", g]).status.code(), Some(2));
    assert_eq!(dsrgan(&["eval-nd", "--grid-dir", g, "--ds", "sift"]).status.code(), Some(2));
    assert_eq!(dsrgan(&["eval-nd", "--grid-dir", g, "--dr", "lab"]).status.code(), Some(2));
}
