use std::path::Path;

use crate::autodiff::Tensor;
use crate::color::luma;
use crate::error::{shape_err, Error, Result};

/// RGB image with values in `[0,1]`, stored row-major with interleaved
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(shape_err!("image must be non-empty, got {width}x{height}"));
        }
        if data.len() != width * height * 3 {
            return Err(shape_err!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "image value {v} outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn solid(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn white(size: usize) -> Self {
        Self::solid(size, size, [1.0; 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(shape_err!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width,
                self.height,
                other.width,
                other.height
            ));
        }
        Ok(())
    }

    /// Snaps every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(to_u8(v)) / 255.0).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| image_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::from_u8(w as usize, h as usize, img.as_raw())
    }

    /// `[3, H, W]` tensor rescaled from `[0,1]` to `[-1,1]`.
    pub fn to_signed_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = 2.0 * p[c] - 1.0;
            }
        }
        out
    }

    /// Inverse of [`Image::to_signed_chw`]; values outside `[-1,1]` clamp.
    pub fn from_signed_chw(width: usize, height: usize, chw: &[f64]) -> Result<Self> {
        let plane = width * height;
        if chw.len() != 3 * plane {
            return Err(shape_err!(
                "expected 3x{height}x{width} values, got {}",
                chw.len()
            ));
        }
        let mut data = vec![0.0; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = ((chw[c * plane + i] + 1.0) / 2.0).clamp(0.0, 1.0);
            }
        }
        Self::new(width, height, data)
    }

    /// Crops rows `[top, top + rows)`.
    pub fn crop_rows(&self, top: usize, rows: usize) -> Result<Image> {
        if rows == 0 || top + rows > self.height {
            return Err(shape_err!(
                "row range [{top}, {}) outside image of height {}",
                top + rows,
                self.height
            ));
        }
        let start = top * self.width * 3;
        Ok(Image {
            width: self.width,
            height: rows,
            data: self.data[start..start + rows * self.width * 3].to_vec(),
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Stacks images into a `[N, 3, H, W]` tensor in `[-1,1]`.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| shape_err!("cannot batch zero images"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        first.same_dims(img)?;
        data.extend(img.to_signed_chw());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Splits a `[N, 3, H, W]` tensor in `[-1,1]` back into images.
pub fn tensor_images(t: &Tensor) -> Result<Vec<Image>> {
    let [n, c, h, w] = t.shape() else {
        return Err(shape_err!("expected [N,3,H,W], got {:?}", t.shape()));
    };
    if *c != 3 {
        return Err(shape_err!("expected 3 channels, got {c}"));
    }
    t.data()
        .chunks_exact(3 * h * w)
        .take(*n)
        .map(|chunk| Image::from_signed_chw(*w, *h, chunk))
        .collect()
}

/// BT.601 grayscale with the result replicated into all three channels.
pub fn to_grayscale(img: &Image) -> Image {
    let data = img
        .data
        .chunks_exact(3)
        .flat_map(|p| {
            // already-gray pixels are returned untouched so the map is idempotent bit for bit
            let y = if p[0] == p[1] && p[1] == p[2] {
                p[0]
            } else {
                luma(p[0], p[1], p[2])
            };
            [y, y, y]
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_examples() {
        let w = to_grayscale(&Image::white(4));
        assert!(w.data().iter().all(|&v| v == 1.0));
        let red = to_grayscale(&Image::solid(2, 2, [1.0, 0.0, 0.0]));
        assert!(red.data().iter().all(|&v| v == 0.299));
    }

    #[test]
    fn grayscale_idempotent() {
        let data: Vec<f64> = (0..48).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let img = Image::new(4, 4, data).unwrap();
        let once = to_grayscale(&img);
        assert_eq!(to_grayscale(&once), once);
        for p in once.pixels() {
            assert!(p[0] == p[1] && p[1] == p[2]);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Image::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn signed_round_trip() {
        let img = Image::solid(3, 2, [0.25, 0.5, 1.0]);
        let back = Image::from_signed_chw(3, 2, &img.to_signed_chw()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn crop_rows_checks_range() {
        let img = Image::white(6);
        assert_eq!(img.crop_rows(0, 2).unwrap().height(), 2);
        assert!(img.crop_rows(4, 3).is_err());
    }
}
