use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::image::{to_grayscale, Image};
use super::shapes::{make_target_sample, RenderSpec, ShapeKind, ShapeSpec};
use crate::error::{Error, Result};

pub const TARGET_DIR: &str = "target";
pub const AUXILIARY_DIR: &str = "auxiliary";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Seed of sample `index` in a dataset built from `seed` (splitmix64 mix).
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub index: usize,
    pub seed: u64,
    pub shape: ShapeSpec,
    pub render: RenderSpec,
}

impl ManifestRecord {
    pub fn to_line(&self) -> String {
        let (s, r) = (&self.shape, &self.render);
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.index, self.seed, s.kind, s.cx, s.cy, s.scale, s.rotation, r.hue, r.saturation, r.value
        )
    }

    /// Parses one manifest line. The two-tone part of the rendering is not
    /// stored; it is recomputable from `seed`.
    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "manifest line needs 10 fields, got {}: `{line}`",
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number `{}` in manifest", f[i])))
        };
        Ok(Self {
            index: f[0]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad index `{}`", f[0])))?,
            seed: f[1]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad seed `{}`", f[1])))?,
            shape: ShapeSpec {
                kind: f[2].parse::<ShapeKind>()?,
                cx: num(3)?,
                cy: num(4)?,
                scale: num(5)?,
                rotation: num(6)?,
            },
            render: RenderSpec {
                hue: num(7)?,
                saturation: num(8)?,
                value: num(9)?,
                two_tone: None,
            },
        })
    }
}

/// Paired target / auxiliary stores. The pairing is recorded for inspection
/// only; training reads the two directories independently.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub size: usize,
    pub target: Vec<Image>,
    pub auxiliary: Vec<Image>,
    pub manifest: Vec<ManifestRecord>,
}

pub fn build_dataset(n: usize, seed: u64, size: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    let mut target = Vec::with_capacity(n);
    let mut auxiliary = Vec::with_capacity(n);
    let mut manifest = Vec::with_capacity(n);
    for index in 0..n {
        let s = sample_seed(seed, index as u64);
        let (img, shape, render) = make_target_sample(s, size);
        // both stores hold exactly what their 8-bit PNGs decode to
        let img = img.quantized();
        auxiliary.push(to_grayscale(&img).quantized());
        target.push(img);
        manifest.push(ManifestRecord {
            index,
            seed: s,
            shape,
            render,
        });
    }
    Ok(Dataset {
        size,
        target,
        auxiliary,
        manifest,
    })
}

pub fn image_name(index: usize) -> String {
    format!("{index:06}.png")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Writes `target/`, `auxiliary/` and the manifest under `dir`; returns
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in [TARGET_DIR, AUXILIARY_DIR] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (i, (t, a)) in self.target.iter().zip(&self.auxiliary).enumerate() {
            t.save_png(&dir.join(TARGET_DIR).join(image_name(i)))?;
            a.save_png(&dir.join(AUXILIARY_DIR).join(image_name(i)))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut out = String::with_capacity(self.manifest.len() * 96);
        for rec in &self.manifest {
            out.push_str(&rec.to_line());
            out.push('\n');
        }
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("index,"))
        .map(ManifestRecord::parse)
        .collect()
}

/// Loads every `.png` in `dir`, ordered by file name.
pub fn load_image_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    paths.iter().map(|p| Image::load(p)).collect()
}

/// Loads the two domains of a dataset directory as independent stores.
pub fn load_domains(dir: &Path) -> Result<(Vec<Image>, Vec<Image>)> {
    Ok((
        load_image_dir(&dir.join(TARGET_DIR))?,
        load_image_dir(&dir.join(AUXILIARY_DIR))?,
    ))
}
