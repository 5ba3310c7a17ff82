use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nd::LatentGenerator;
use crate::data::{render, Image, RenderSpec, ShapeKind, ShapeSpec};
use crate::error::Result;

/// How a [`ProceduralGenerator`] uses its two latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tie {
    /// `z_s` sets the shape only, `z_r` the paint only.
    Ideal,
    /// `z_s` is replaced by a fixed latent.
    IgnoreZs,
    /// `z_r` is replaced by a fixed latent.
    IgnoreZr,
    /// Both latents are replaced; every output is the same image.
    Constant,
    /// Shape and paint both read `(z_s + z_r) / 2`, so the two latents play
    /// interchangeable roles.
    Symmetric,
}

/// Renders images straight from latents without any network.
#[derive(Clone, Debug)]
pub struct ProceduralGenerator {
    pub size: usize,
    pub tie: Tie,
}

impl ProceduralGenerator {
    pub const ZS_DIM: usize = 5;

    pub fn new(size: usize, tie: Tie) -> Self {
        Self { size, tie }
    }

    pub fn render_one(&self, zs: &[f64], zr: &[f64]) -> Image {
        let fixed = [0.0; Self::ZS_DIM];
        let (s, r): (Vec<f64>, Vec<f64>) = match self.tie {
            Tie::Ideal => (zs.to_vec(), zr.to_vec()),
            Tie::IgnoreZs => (fixed.to_vec(), zr.to_vec()),
            Tie::IgnoreZr => (zs.to_vec(), fixed.to_vec()),
            Tie::Constant => (fixed.to_vec(), fixed.to_vec()),
            Tie::Symmetric => {
                let m: Vec<f64> = zs.iter().zip(zr).map(|(a, b)| (a + b) / 2.0).collect();
                (m.clone(), m)
            }
        };
        render(
            &ShapeSpec::from_latent(&s, self.size),
            &RenderSpec::from_latent(&r),
            self.size,
        )
    }
}

impl LatentGenerator for ProceduralGenerator {
    fn zs_dim(&self) -> usize {
        Self::ZS_DIM
    }
    fn zr_dim(&self) -> usize {
        if self.tie == Tie::Symmetric {
            Self::ZS_DIM
        } else {
            3
        }
    }
    fn generate(&mut self, zs: &[Vec<f64>], zr: &[Vec<f64>]) -> Result<Vec<Image>> {
        Ok(zs.iter().zip(zr).map(|(s, r)| self.render_one(s, r)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diversity {
    Low,
    High,
}

fn jitter(rng: &mut ChaCha8Rng, base: f64, amount: f64) -> f64 {
    base + rng.random_range(-amount..=amount)
}

/// A `rows x cols` grid in the style of the toy ND illustrations: row `i`
/// fixes one shape, column `j` fixes one paint. Low diversity jitters a
/// single base shape (or paint) slightly; high diversity spreads rows over
/// distinct shape kinds and columns evenly around the hue circle.
pub fn toy_grid(
    shape: Diversity,
    color: Diversity,
    rows: usize,
    cols: usize,
    size: usize,
    seed: u64,
) -> Vec<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_shape = ShapeSpec::sample(&mut rng, size);
    let kind_offset = rng.random_range(0..ShapeKind::ALL.len());
    let shapes: Vec<ShapeSpec> = (0..rows)
        .map(|i| match shape {
            Diversity::High => ShapeSpec {
                kind: ShapeKind::ALL[(kind_offset + i) % ShapeKind::ALL.len()],
                ..ShapeSpec::sample(&mut rng, size)
            },
            Diversity::Low => {
                let scale = jitter(&mut rng, base_shape.scale, 0.02);
                let (lo, hi) = ShapeSpec::center_range(scale, size);
                ShapeSpec {
                    kind: base_shape.kind,
                    cx: jitter(&mut rng, base_shape.cx, 1.0).clamp(lo, hi),
                    cy: jitter(&mut rng, base_shape.cy, 1.0).clamp(lo, hi),
                    scale,
                    rotation: jitter(&mut rng, base_shape.rotation, 0.1),
                }
            }
        })
        .collect();
    let base_paint = RenderSpec::from_latent(&[
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
    ]);
    let paints: Vec<RenderSpec> = (0..cols)
        .map(|j| match color {
            Diversity::High => RenderSpec {
                hue: (base_paint.hue + 360.0 * j as f64 / cols as f64).rem_euclid(360.0),
                saturation: rng.random_range(0.5..=1.0),
                value: rng.random_range(0.5..=1.0),
                two_tone: None,
            },
            Diversity::Low => RenderSpec {
                hue: jitter(&mut rng, base_paint.hue, 5.0).rem_euclid(360.0),
                ..base_paint
            },
        })
        .collect();
    shapes
        .iter()
        .map(|s| paints.iter().map(|p| render(s, p, size)).collect())
        .collect()
}
