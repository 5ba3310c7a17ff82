use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::fbpd::fbpd_distance;
use super::histogram::color_distance;
use super::hog::hog_distance;
use crate::data::Image;
use crate::error::{Error, Result};

/// `|a - b| / (|a| + |b|)`, with `0/0` taken as 0. Lies in `[0,1]`.
pub fn normalized_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na + nb;
    if denom == 0.0 {
        0.0
    } else {
        (diff / denom).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Full,
    /// Rows `[0, H/3)`.
    UpperThird,
}

impl Region {
    pub fn apply(self, img: &Image) -> Result<Image> {
        match self {
            Region::Full => Ok(img.clone()),
            Region::UpperThird => img.crop_rows(0, img.height() / 3),
        }
    }
}

/// A distance between two images with values in `[0,1]`.
pub trait Distance {
    fn name(&self) -> String;
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Hog;

impl Distance for Hog {
    fn name(&self) -> String {
        "hog".into()
    }
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        hog_distance(a, b)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Fbpd;

impl Distance for Fbpd {
    fn name(&self) -> String {
        "fbpd".into()
    }
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        fbpd_distance(a, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ColorHist(pub Region);

impl Distance for ColorHist {
    fn name(&self) -> String {
        match self.0 {
            Region::Full => "hist".into(),
            Region::UpperThird => "hist13".into(),
        }
    }
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        color_distance(a, b, self.0)
    }
}

/// Structure distance names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureDistance {
    Hog,
    Fbpd,
    Embed,
}

impl FromStr for StructureDistance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hog" => Ok(Self::Hog),
            "fbpd" => Ok(Self::Fbpd),
            "embed" => Ok(Self::Embed),
            _ => Err(Error::InvalidArgument(format!(
                "unknown structure distance `{s}` (expected hog, fbpd or embed)"
            ))),
        }
    }
}

impl fmt::Display for StructureDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hog => "hog",
            Self::Fbpd => "fbpd",
            Self::Embed => "embed",
        })
    }
}

impl FromStr for ColorHist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hist" => Ok(Self(Region::Full)),
            "hist13" => Ok(Self(Region::UpperThird)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown rendering distance `{s}` (expected hist or hist13)"
            ))),
        }
    }
}

/// Identifies an image by its 8-bit content.
pub fn image_fingerprint(img: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(img.to_u8());
    h.finalize().into()
}

pub fn write_features(path: &Path, features: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = features.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let len = length_sidecar(path);
    fs::write(&len, format!("{}\n", features.len())).map_err(|e| Error::io(&len, e))
}

pub fn read_features(path: &Path) -> Result<Vec<f64>> {
    let len_path = length_sidecar(path);
    let text = fs::read_to_string(&len_path).map_err(|e| Error::io(&len_path, e))?;
    let n: usize = text.trim().parse().map_err(|_| {
        Error::InvalidArgument(format!("bad length `{}` in {}", text.trim(), len_path.display()))
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * 8 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} bytes, length header says {n} doubles",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// `<stem>.f64` -> `<stem>.f64.len`
fn length_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".len");
    s.into()
}

/// Normalized Euclidean distance between externally computed feature
/// vectors. Features are looked up by image content.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingDistance {
    features: HashMap<[u8; 32], Vec<f64>>,
}

impl EmbeddingDistance {
    pub fn insert(&mut self, img: &Image, features: Vec<f64>) {
        self.features.insert(image_fingerprint(img), features);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Pairs every `<stem>.png` in `dir` with its `<stem>.f64` feature file.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut out = Self::default();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries.filter_map(|e| e.ok()) {
            let path = entry.path();
            if path.extension().is_none_or(|x| x != "png") {
                continue;
            }
            let feat = path.with_extension("f64");
            if !feat.exists() {
                continue;
            }
            let img = Image::load(&path)?;
            out.insert(&img, read_features(&feat)?);
        }
        if out.is_empty() {
            return Err(Error::Config(format!(
                "no feature files (<stem>.f64) found in {}",
                dir.display()
            )));
        }
        Ok(out)
    }

    fn lookup(&self, img: &Image) -> Result<&[f64]> {
        self.features
            .get(&image_fingerprint(img))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config("no feature vector for an evaluated image".into()))
    }
}

impl Distance for EmbeddingDistance {
    fn name(&self) -> String {
        "embed".into()
    }
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        let (fa, fb) = (self.lookup(a)?, self.lookup(b)?);
        if fa.len() != fb.len() {
            return Err(Error::Shape(format!(
                "feature lengths differ: {} vs {}",
                fa.len(),
                fb.len()
            )));
        }
        Ok(normalized_euclidean(fa, fb))
    }
}
