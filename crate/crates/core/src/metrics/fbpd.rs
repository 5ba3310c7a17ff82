use crate::data::Image;
use crate::error::Result;

/// Grayscale levels at or above this count as background.
pub const BACKGROUND_MIN: u8 = 250;

/// 8-bit BT.601 grayscale of each pixel.
pub fn gray_u8(img: &Image) -> Vec<u8> {
    img.to_u8()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// `true` where the pixel is foreground (grayscale below 250).
pub fn foreground_mask(img: &Image) -> Vec<bool> {
    gray_u8(img).into_iter().map(|g| g < BACKGROUND_MIN).collect()
}

/// Foreground symmetric difference over foreground union; 0 when both
/// foregrounds are empty.
pub fn mask_disagreement(a: &[bool], b: &[bool]) -> f64 {
    let (mut xor, mut union) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        xor += usize::from(p != q);
        union += usize::from(p || q);
    }
    if union == 0 {
        0.0
    } else {
        xor as f64 / union as f64
    }
}

pub fn fbpd_distance(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    Ok(mask_disagreement(&foreground_mask(a), &foreground_mask(b)))
}
