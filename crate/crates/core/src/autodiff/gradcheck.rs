//! Central finite-difference verification of graph gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Activation, BnMode, Graph, RunningStats, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// derivative is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// How many times the step may be shrunk by 10x to avoid straddling a
    /// kink (relu, abs, clamp).
    pub max_shrinks: u32,
    /// Richardson-extrapolate central differences at `h` and `h/2`, which
    /// cancels the `h^2` truncation term.
    pub extrapolate: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-6,
            max_shrinks: 4,
            extrapolate: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor, element)` of the worst entry.
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Entries where every step size straddled a kink.
    pub kinked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    fn record(&mut self, at: (usize, usize), analytic: f64, numeric: f64, floor: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if rel > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = rel;
            self.worst = at;
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }
}

/// Checks `d loss / d inputs` for every element of every tensor in `inputs`.
///
/// `build` records the computation on a fresh graph given one leaf per input
/// tensor and returns the scalar loss.
pub fn check_gradients<F>(inputs: &[Tensor], opts: GradCheckOptions, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut reports = check_gradients_multi(inputs, opts, |g, v| Ok(vec![build(g, v)?]))?;
    Ok(reports.remove(0))
}

/// As [`check_gradients`] for several scalar outputs of one computation; each
/// perturbed forward pass serves every output. One report per output.
pub fn check_gradients_multi<F>(
    inputs: &[Tensor],
    opts: GradCheckOptions,
    mut build: F,
) -> Result<Vec<GradCheckReport>>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Vec<Var>>,
{
    let mut analytic: Vec<Vec<Tensor>> = Vec::new();
    let mut k = 0;
    loop {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let outs = build(&mut g, &leaves)?;
        g.backward(outs[k])?;
        analytic.push(leaves.iter().map(|&v| g.grad_or_zeros(v)).collect());
        k += 1;
        if k == outs.len() {
            break;
        }
    }
    let n_out = analytic.len();
    let mut forward = |vals: &[Tensor]| -> Result<(Vec<f64>, Vec<u8>)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let outs = build(&mut g, &leaves)?;
        let f: Vec<f64> = outs.iter().map(|&o| g.item(o)).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient check loss".into()));
        }
        Ok((f, g.kink_pattern()))
    };

    let (_, base_pattern) = forward(inputs)?;

    let mut vals = inputs.to_vec();
    let mut reports = vec![GradCheckReport::default(); n_out];
    let mut central = |vals: &mut [Tensor], ti: usize, ei: usize, orig: f64, h: f64| -> Result<(Vec<f64>, bool)> {
        vals[ti].data_mut()[ei] = orig + h;
        let (fp, pp) = forward(vals)?;
        vals[ti].data_mut()[ei] = orig - h;
        let (fm, pm) = forward(vals)?;
        vals[ti].data_mut()[ei] = orig;
        let d = fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        Ok((d, pp == base_pattern && pm == base_pattern))
    };
    for ti in 0..vals.len() {
        for ei in 0..vals[ti].len() {
            let orig = vals[ti].data()[ei];
            let mut h = opts.step;
            let mut numeric = vec![0.0; n_out];
            let mut smooth = false;
            for _ in 0..=opts.max_shrinks {
                let (d1, ok1) = central(&mut vals, ti, ei, orig, h)?;
                let ok = if opts.extrapolate {
                    let (d2, ok2) = central(&mut vals, ti, ei, orig, h / 2.0)?;
                    numeric = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
                    ok1 && ok2
                } else {
                    numeric = d1;
                    ok1
                };
                if ok {
                    smooth = true;
                    break;
                }
                h /= 10.0;
            }
            for (k, r) in reports.iter_mut().enumerate() {
                if !smooth {
                    r.kinked += 1;
                }
                r.record((ti, ei), analytic[k][ti].data()[ei], numeric[k], opts.floor);
            }
        }
    }
    Ok(reports)
}

type BuildFn = Box<dyn FnMut(&mut Graph, &[Var]) -> Result<Var>>;

/// One operator exercised through a scalar loss.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: BuildFn,
}

impl OpCase {
    fn new(
        name: &'static str,
        inputs: Vec<Tensor>,
        build: impl FnMut(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            inputs,
            build: Box::new(build),
        }
    }

    pub fn check(&mut self, opts: GradCheckOptions) -> Result<GradCheckReport> {
        let build = &mut self.build;
        check_gradients(&self.inputs, opts, |g, v| build(g, v))
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches length")
}

fn fixed(shape: Vec<usize>, f: impl Fn(f64) -> f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|i| f(i as f64)).collect()).expect("shape matches length")
}

/// Every differentiable operator of the graph with random inputs drawn from
/// `seed`, each reduced to a scalar through a non-trivial loss.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random(&[2, 3, 4, 4], &mut rng);
    let mut cases = Vec::new();

    let w1 = weights.clone();
    cases.push(OpCase::new(
        "conv2d",
        vec![random(&[2, 2, 6, 6], &mut rng), random(&[3, 2, 3, 3], &mut rng)],
        move |g: &mut Graph, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], 1, 1)?;
            let w = g.constant(fixed(vec![2, 3, 6, 6], |i| (i * 0.37).sin()));
            let p = g.mul(y, w)?;
            g.sum(p)
        },
    ));
    cases.push(OpCase::new(
        "conv2d_stride2",
        vec![random(&[1, 2, 6, 6], &mut rng), random(&[2, 2, 4, 4], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], 2, 1)?;
            let sq = g.mul(y, y)?;
            g.sum(sq)
        },
    ));
    cases.push(OpCase::new(
        "conv2d_transposed",
        vec![random(&[2, 2, 2, 2], &mut rng), random(&[2, 3, 4, 4], &mut rng)],
        move |g: &mut Graph, v: &[Var]| {
            let y = g.conv2d_transposed(v[0], v[1], 2, 1)?;
            let w = g.constant(w1.clone());
            let p = g.mul(y, w)?;
            g.sum(p)
        },
    ));
    cases.push(OpCase::new(
        "dense",
        vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng), random(&[2], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let y = g.dense(v[0], v[1], v[2])?;
            let sq = g.mul(y, y)?;
            g.sum(sq)
        },
    ));
    for kind in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        cases.push(OpCase::new(
            "activation",
            vec![random(&[2, 5], &mut rng)],
            move |g: &mut Graph, v: &[Var]| {
                let y = g.activation(v[0], kind)?;
                let c = g.constant(fixed(vec![2, 5], |i| 1.0 + i * 0.1));
                let y2 = g.mul(y, c)?;
                let sq = g.mul(y2, y2)?;
                g.sum(sq)
            },
        ));
    }
    cases.push(OpCase::new(
        "batch_norm",
        vec![random(&[3, 2, 2, 2], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let mut rs = RunningStats::new(2);
            let y = g.batch_norm(v[0], v[1], v[2], BnMode::Train, &mut rs)?;
            let c = g.constant(fixed(vec![3, 2, 2, 2], f64::cos));
            let p = g.mul(y, c)?;
            let t = g.tanh(p)?;
            g.sum(t)
        },
    ));
    cases.push(OpCase::new(
        "batch_norm_eval",
        vec![random(&[3, 2, 2, 2], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let mut rs = RunningStats { mean: vec![0.1, -0.2], var: vec![0.5, 2.0] };
            let y = g.batch_norm(v[0], v[1], v[2], BnMode::Eval, &mut rs)?;
            let sq = g.mul(y, y)?;
            g.sum(sq)
        },
    ));
    cases.push(OpCase::new(
        "concat_slice_reshape",
        vec![random(&[2, 2, 3], &mut rng), random(&[2, 1, 3], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let c = g.concat(v[0], v[1])?;
            let s = g.slice_axis1(c, 1, 2)?;
            let f = g.flatten(s)?;
            let sq = g.mul(f, f)?;
            let m = g.mean(sq)?;
            let t = g.tanh(c)?;
            let st = g.sum(t)?;
            g.add(m, st)
        },
    ));
    cases.push(OpCase::new(
        "elementwise",
        vec![random(&[4], &mut rng), random(&[4], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let d = g.sub(v[0], v[1])?;
            let a = g.abs(d)?;
            let s = g.sigmoid(v[0])?;
            let c = g.clamp(s, 1e-7, 1.0 - 1e-7)?;
            let l = g.ln(c)?;
            let one_minus = g.scale(s, -1.0)?;
            let one_minus = g.add_scalar(one_minus, 1.0)?;
            let l2 = g.ln(one_minus)?;
            let p = g.mul(a, l)?;
            let t = g.add(p, l2)?;
            g.sum(t)
        },
    ));
    cases.push(OpCase::new(
        "row_norm",
        vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)],
        |g: &mut Graph, v: &[Var]| {
            let d = g.sub(v[0], v[1])?;
            let n = g.row_norm(d)?;
            let sq = g.mul(n, n)?;
            let s1 = g.sum(sq)?;
            let s2 = g.mean(n)?;
            g.add(s1, s2)
        },
    ));

    cases
}
