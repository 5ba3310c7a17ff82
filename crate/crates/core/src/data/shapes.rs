//! Procedural target domain: one anti-aliased colored shape on white.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use crate::color::hsv_to_rgb;
use crate::error::Error;

/// White pixels kept between the shape's bounding circle and the border,
/// beyond the one-pixel anti-aliasing band.
pub const MARGIN_PX: f64 = 2.0;
pub const SCALE_RANGE: (f64, f64) = (0.3, 0.78);
const ELLIPSE_ASPECT: f64 = 0.55;
const TWO_TONE_PROB: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Ellipse,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Ellipse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ellipse => "ellipse",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape kind `{s}`")))
    }
}

/// Geometry of one sample. `scale` is the diameter of the shape's
/// circumscribed circle as a fraction of the image extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub rotation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoTone {
    pub hue: f64,
    /// Direction (radians) of the normal of the line splitting the two tones.
    pub axis: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSpec {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
    pub two_tone: Option<TwoTone>,
}

fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

fn unit(z: f64) -> f64 {
    ((z + 1.0) / 2.0).clamp(0.0, 1.0)
}

impl ShapeSpec {
    pub fn radius(&self, size: usize) -> f64 {
        self.scale * size as f64 / 2.0
    }

    /// Allowed range for either center coordinate at this scale.
    pub fn center_range(scale: f64, size: usize) -> (f64, f64) {
        let r = scale * size as f64 / 2.0;
        let slack = MARGIN_PX + 0.5;
        (r + slack, size as f64 - r - slack)
    }

    pub fn sample(rng: &mut impl Rng, size: usize) -> Self {
        let kind = ShapeKind::ALL[rng.random_range(0..4)];
        let scale = rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
        let (lo, hi) = Self::center_range(scale, size);
        Self {
            kind,
            cx: rng.random_range(lo..=hi),
            cy: rng.random_range(lo..=hi),
            scale,
            rotation: rng.random_range(0.0..TAU),
        }
    }

    /// Deterministic decoding of a latent in `[-1,1]^5` (extra entries ignored).
    pub fn from_latent(z: &[f64], size: usize) -> Self {
        assert!(z.len() >= 5, "shape latent needs at least 5 entries");
        let kind = ShapeKind::ALL[((unit(z[0]) * 4.0) as usize).min(3)];
        let scale = lerp(SCALE_RANGE.0, SCALE_RANGE.1, unit(z[1]));
        let (lo, hi) = Self::center_range(scale, size);
        Self {
            kind,
            cx: lerp(lo, hi, unit(z[2])),
            cy: lerp(lo, hi, unit(z[3])),
            scale,
            rotation: TAU * unit(z[4]),
        }
    }

    /// Signed distance in pixels from `(x, y)` to the outline; negative inside.
    pub fn signed_distance(&self, x: f64, y: f64, size: usize) -> f64 {
        let r = self.radius(size);
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = (-self.rotation).sin_cos();
        let (u, v) = (c * dx - s * dy, s * dx + c * dy);
        match self.kind {
            ShapeKind::Circle => (u * u + v * v).sqrt() - r,
            ShapeKind::Square => polygon_sd(u, v, r, 4),
            ShapeKind::Triangle => polygon_sd(u, v, r, 3),
            ShapeKind::Ellipse => {
                let (a, b) = (r, r * ELLIPSE_ASPECT);
                let k = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let grad = ((u / (a * a)).powi(2) + (v / (b * b)).powi(2)).sqrt();
                if k < 1e-9 || grad < 1e-12 {
                    -b
                } else {
                    (k - 1.0) * k / grad
                }
            }
        }
    }
}

/// Signed distance to a regular `n`-gon with circumradius `r` centred at
/// the origin.
fn polygon_sd(u: f64, v: f64, r: f64, n: usize) -> f64 {
    let verts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = TAU * i as f64 / n as f64 - PI / 2.0;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let mut min_d = f64::INFINITY;
    let mut inside = true;
    for i in 0..n {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % n];
        let (ex, ey) = (bx - ax, by - ay);
        let (px, py) = (u - ax, v - ay);
        let t = ((px * ex + py * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (qx, qy) = (px - t * ex, py - t * ey);
        min_d = min_d.min((qx * qx + qy * qy).sqrt());
        // counter-clockwise winding: interior points lie left of every edge
        if ex * py - ey * px < 0.0 {
            inside = false;
        }
    }
    if inside {
        -min_d
    } else {
        min_d
    }
}

impl RenderSpec {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let hue = rng.random_range(0.0..360.0);
        let saturation = rng.random_range(0.5..=1.0);
        let value = rng.random_range(0.5..=1.0);
        let two_tone = (rng.random::<f64>() < TWO_TONE_PROB).then(|| TwoTone {
            hue: (hue + rng.random_range(90.0..270.0)) % 360.0,
            axis: rng.random_range(0.0..PI),
        });
        Self {
            hue,
            saturation,
            value,
            two_tone,
        }
    }

    /// Deterministic decoding of a latent in `[-1,1]^3` (extra entries ignored).
    pub fn from_latent(z: &[f64]) -> Self {
        assert!(z.len() >= 3, "render latent needs at least 3 entries");
        Self {
            hue: (360.0 * unit(z[0])) % 360.0,
            saturation: lerp(0.5, 1.0, unit(z[1])),
            value: lerp(0.5, 1.0, unit(z[2])),
            two_tone: None,
        }
    }

    fn color_at(&self, dx: f64, dy: f64) -> [f64; 3] {
        let hue = match self.two_tone {
            Some(t) if dx * t.axis.cos() + dy * t.axis.sin() > 0.0 => t.hue,
            _ => self.hue,
        };
        let (r, g, b) = hsv_to_rgb(hue, self.saturation, self.value);
        [r, g, b]
    }
}

/// Renders `shape` painted with `render` on a white `size`x`size` canvas.
/// Coverage ramps linearly across a one-pixel band around the outline.
pub fn render(shape: &ShapeSpec, render: &RenderSpec, size: usize) -> Image {
    let mut img = Image::white(size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let cov = (0.5 - shape.signed_distance(px, py, size)).clamp(0.0, 1.0);
            if cov > 0.0 {
                let fg = render.color_at(px - shape.cx, py - shape.cy);
                img.set_pixel(x, y, fg.map(|c| cov * c + (1.0 - cov)));
            }
        }
    }
    img
}

/// One deterministic target-domain sample.
pub fn make_target_sample(seed: u64, size: usize) -> (Image, ShapeSpec, RenderSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ShapeSpec::sample(&mut rng, size);
    let paint = RenderSpec::sample(&mut rng);
    (render(&shape, &paint, size), shape, paint)
}
