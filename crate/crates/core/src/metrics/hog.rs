use super::distance::normalized_euclidean;
use crate::data::{to_grayscale, Image};
use crate::error::{shape_err, Result};

pub const CELL: usize = 8;
pub const BLOCK: usize = 2;
pub const BINS: usize = 9;
const BLOCK_EPS: f64 = 1e-5;
const HYS_CLIP: f64 = 0.2;

/// Dalal-Triggs HOG of the BT.601 grayscale image: centred `[-1,0,1]`
/// gradients (zero on the border), unsigned orientations hard-binned into 9
/// bins per 8x8 cell, 2x2-cell blocks with stride one cell, L2-Hys block
/// normalization.
pub fn hog_features(img: &Image) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (w / CELL, h / CELL);
    if cx < BLOCK || cy < BLOCK {
        return Err(shape_err!(
            "HOG needs at least {0}x{0} pixels, got {w}x{h}",
            CELL * BLOCK
        ));
    }
    let gray: Vec<f64> = to_grayscale(img).pixels().map(|p| p[0]).collect();
    let at = |x: usize, y: usize| gray[y * w + x];

    let mut cells = vec![0.0; cx * cy * BINS];
    for y in 0..cy * CELL {
        for x in 0..cx * CELL {
            let gx = if x == 0 || x + 1 == w { 0.0 } else { at(x + 1, y) - at(x - 1, y) };
            let gy = if y == 0 || y + 1 == h { 0.0 } else { at(x, y + 1) - at(x, y - 1) };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((deg / (180.0 / BINS as f64)) as usize).min(BINS - 1);
            cells[((y / CELL) * cx + x / CELL) * BINS + bin] += mag;
        }
    }
    let area = (CELL * CELL) as f64;
    cells.iter_mut().for_each(|v| *v /= area);

    let (bx, by) = (cx - BLOCK + 1, cy - BLOCK + 1);
    let mut out = Vec::with_capacity(bx * by * BLOCK * BLOCK * BINS);
    let mut block = Vec::with_capacity(BLOCK * BLOCK * BINS);
    for j in 0..by {
        for i in 0..bx {
            block.clear();
            for dy in 0..BLOCK {
                for dx in 0..BLOCK {
                    let c = ((j + dy) * cx + i + dx) * BINS;
                    block.extend_from_slice(&cells[c..c + BINS]);
                }
            }
            l2_normalize(&mut block);
            block.iter_mut().for_each(|v| *v = v.min(HYS_CLIP));
            l2_normalize(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Ok(out)
}

fn l2_normalize(v: &mut [f64]) {
    let n = (v.iter().map(|x| x * x).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

pub fn hog_distance(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    Ok(normalized_euclidean(&hog_features(a)?, &hog_features(b)?))
}
