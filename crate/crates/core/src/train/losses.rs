//! Loss terms recorded on a graph.

use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

fn log_clamped(g: &mut Graph, p: Var, complement: bool) -> Result<Var> {
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let q = if complement {
        let neg = g.scale(p, -1.0)?;
        g.add_scalar(neg, 1.0)?
    } else {
        p
    };
    g.ln(q)
}

/// `-mean log D(x) - mean log(1 - D(G(z)))` for one domain.
pub fn d_adversarial(g: &mut Graph, p_real: Var, p_fake: Var) -> Result<Var> {
    let a = log_clamped(g, p_real, false)?;
    let a = g.mean(a)?;
    let b = log_clamped(g, p_fake, true)?;
    let b = g.mean(b)?;
    let s = g.add(a, b)?;
    g.scale(s, -1.0)
}

/// Non-saturating generator term `-mean log D(G(z))` for one domain.
pub fn g_adversarial(g: &mut Graph, p_fake: Var) -> Result<Var> {
    let a = log_clamped(g, p_fake, false)?;
    let a = g.mean(a)?;
    g.scale(a, -1.0)
}

/// Batch mean of the row-wise Euclidean distance between `[N, D]` latents.
pub fn latent_l2(g: &mut Graph, z: Var, z_hat: Var) -> Result<Var> {
    let d = g.sub(z, z_hat)?;
    let n = g.row_norm(d)?;
    g.mean(n)
}

/// Mean absolute difference over every element of two image batches.
pub fn image_l1(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let d = g.sub(x, x_hat)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// `a + w * b`; skips recording the product when `w` is zero.
pub fn weighted_add(g: &mut Graph, a: Var, w: f64, b: Var) -> Result<Var> {
    if w == 0.0 {
        return Ok(a);
    }
    let wb = g.scale(b, w)?;
    g.add(a, wb)
}
