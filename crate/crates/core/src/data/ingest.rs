use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::image::Image;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub images: Vec<Image>,
    /// Source file of each ingested image, same order as `images`.
    pub sources: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
}

/// Loads every decodable image in `dir` (sorted by name), center-crops it to
/// a square and resizes it to `resolution` with bilinear filtering.
/// Undecodable files are skipped with a warning.
pub fn ingest_folder(dir: &Path, resolution: usize) -> Result<IngestReport> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut report = IngestReport {
        images: Vec::new(),
        sources: Vec::new(),
        skipped: Vec::new(),
    };
    for path in paths {
        let decoded = match image::open(&path) {
            Ok(img) => img.into_rgb8(),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push(path);
                continue;
            }
        };
        let (w, h) = decoded.dimensions();
        let side = w.min(h);
        let cropped =
            image::imageops::crop_imm(&decoded, (w - side) / 2, (h - side) / 2, side, side)
                .to_image();
        let res = resolution as u32;
        let sized = if side == res {
            cropped
        } else {
            image::imageops::resize(&cropped, res, res, FilterType::Triangle)
        };
        report
            .images
            .push(Image::from_u8(resolution, resolution, sized.as_raw())?);
        report.sources.push(path);
    }
    if report.images.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(report)
}
