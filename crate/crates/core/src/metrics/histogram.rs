use super::distance::{normalized_euclidean, Region};
use crate::color::rgb_to_hsv;
use crate::data::Image;
use crate::error::{shape_err, Result};

pub const HUE_BINS: usize = 18;
pub const SAT_BINS: usize = 8;
pub const VAL_BINS: usize = 8;
pub const HIST_LEN: usize = HUE_BINS * SAT_BINS * VAL_BINS;

/// Flat index of the `(h, s, v)` bin.
pub fn bin_index(h: usize, s: usize, v: usize) -> usize {
    (h * SAT_BINS + s) * VAL_BINS + v
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

/// Joint 18x8x8 HSV histogram, L1-normalized. Achromatic pixels fall into
/// hue bin 0.
pub fn hsv_histogram(img: &Image, region: Region) -> Result<Vec<f64>> {
    let img = region.apply(img)?;
    let mut hist = vec![0.0; HIST_LEN];
    for p in img.pixels() {
        let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
        hist[bin_index(bin_of(h / 360.0, HUE_BINS), bin_of(s, SAT_BINS), bin_of(v, VAL_BINS))] +=
            1.0;
    }
    let n = (img.width() * img.height()) as f64;
    if n == 0.0 {
        return Err(shape_err!("empty histogram region"));
    }
    hist.iter_mut().for_each(|c| *c /= n);
    Ok(hist)
}

pub fn color_distance(a: &Image, b: &Image, region: Region) -> Result<f64> {
    a.same_dims(b)?;
    Ok(normalized_euclidean(
        &hsv_histogram(a, region)?,
        &hsv_histogram(b, region)?,
    ))
}
