use crate::error::{shape_err, Result};

/// Adam hyperparameters. Defaults follow the usual GAN setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamMoments,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || state.m.len() != param.len() || state.v.len() != param.len()
    {
        return Err(shape_err!(
            "adam: param {} / grad {} / moments {} lengths disagree",
            param.len(),
            grad.len(),
            state.m.len()
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
