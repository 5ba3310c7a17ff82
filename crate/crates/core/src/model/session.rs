use super::{Domain, Group, Model, LEAKY_SLOPE, OUT_KERNEL};
use crate::autodiff::{Activation, BnMode, Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Discriminator outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct DiscOut {
    /// `[N, 1]` pre-sigmoid scores.
    pub logit: Var,
    /// `[N, 1]`
    pub prob: Var,
    /// `[N, Dr]`, read from the second domain-specific layer.
    pub zr_hat: Var,
    /// `[N, Ds]`, read from the last shared layer.
    pub zs_hat: Var,
}

/// Both domains generated from one `z_s`. With the structure generator
/// present, `pyramid` is the single set of features both renderers read.
#[derive(Clone, Debug)]
pub struct GeneratedPair {
    pub pyramid: Option<Vec<Var>>,
    pub target: Var,
    pub auxiliary: Option<Var>,
}

/// One forward pass of the model recorded on a graph. Every parameter is
/// bound to a single leaf per graph, so paths that share a component
/// accumulate into the same gradient.
pub struct Session<'a> {
    pub graph: &'a mut Graph,
    model: &'a mut Model,
    bound: Vec<Option<Var>>,
    trainable: Option<Group>,
    pub bn_mode: BnMode,
    /// In train mode, whether batch statistics are folded into the running
    /// statistics.
    pub update_stats: bool,
}

impl<'a> Session<'a> {
    /// Parameters of `trainable` become gradient-tracking leaves; all
    /// others are constants.
    pub fn new(
        graph: &'a mut Graph,
        model: &'a mut Model,
        trainable: Option<Group>,
        bn_mode: BnMode,
    ) -> Self {
        let n = model.params.len();
        Self {
            graph,
            model,
            bound: vec![None; n],
            trainable,
            bn_mode,
            update_stats: bn_mode == BnMode::Train,
        }
    }

    /// Uses caller-provided graph variables (one per parameter, in model
    /// order) in place of the stored values.
    pub fn with_params(
        graph: &'a mut Graph,
        model: &'a mut Model,
        vars: &[Var],
        bn_mode: BnMode,
    ) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(shape_err!(
                "{} parameter variables for {} parameters",
                vars.len(),
                model.params.len()
            ));
        }
        for (v, p) in vars.iter().zip(&model.params) {
            if graph.shape(*v) != p.value.shape() {
                return Err(shape_err!(
                    "variable for `{}` has shape {:?}, expected {:?}",
                    p.name,
                    graph.shape(*v),
                    p.value.shape()
                ));
            }
        }
        let mut s = Self::new(graph, model, None, bn_mode);
        s.bound = vars.iter().map(|&v| Some(v)).collect();
        Ok(s)
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self.model.param_index(name)?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let p = &self.model.params[i];
        let v = self
            .graph
            .leaf(p.value.clone(), self.trainable == Some(p.group));
        self.bound[i] = Some(v);
        Ok(v)
    }

    /// Gradient of each parameter after `backward`, in model order; `None`
    /// for parameters that were unused or not trainable.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|v| v.and_then(|v| self.graph.grad(v).cloned()))
            .collect()
    }

    fn bn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let slot = self.model.bn_slot(prefix)?;
        if self.bn_mode == BnMode::Train && !self.update_stats {
            let mut scratch = self.model.bn[slot].1.clone();
            self.graph.batch_norm(x, gamma, beta, self.bn_mode, &mut scratch)
        } else {
            let stats = &mut self.model.bn[slot].1;
            self.graph.batch_norm(x, gamma, beta, self.bn_mode, stats)
        }
    }

    /// Dense projection to the base grid, then BN and ReLU.
    fn base(&mut self, z: Var, prefix: &str) -> Result<Var> {
        let c = &self.model.config;
        let (w0, b) = (c.widths[0], c.base_extent());
        let n = self.graph.shape(z)[0];
        let w = self.param(&format!("{prefix}.fc.w"))?;
        let bias = self.param(&format!("{prefix}.fc.b"))?;
        let h = self.graph.dense(z, w, bias)?;
        let h = self.graph.reshape(h, vec![n, w0, b, b])?;
        let h = self.bn(h, &format!("{prefix}.bn0"))?;
        self.graph.relu(h)
    }

    /// Stride-2 transposed convolution doubling the extent, then BN and ReLU.
    fn up(&mut self, x: Var, prefix: &str, level: usize) -> Result<Var> {
        let k = self.param(&format!("{prefix}.up{level}.k"))?;
        let h = self.graph.conv2d_transposed(x, k, 2, 1)?;
        let h = self.bn(h, &format!("{prefix}.bn{level}"))?;
        self.graph.relu(h)
    }

    fn check_latent(&self, z: Var, dim: usize, what: &str) -> Result<()> {
        match *self.graph.shape(z) {
            [_, d] if d == dim => Ok(()),
            ref s => Err(shape_err!("{what} must be [N, {dim}], got {s:?}")),
        }
    }

    fn check_domain(&self, domain: Domain) -> Result<()> {
        if self.model.has_domain(domain) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "model built without the {domain} domain"
            )))
        }
    }

    /// Feature pyramid `I_s0 .. I_s(L-1)`, coarsest first, from `z_s` only.
    pub fn structure(&mut self, zs: Var) -> Result<Vec<Var>> {
        if self.model.config.ablations.no_pra {
            return Err(Error::InvalidArgument(
                "model built without the structure generator".into(),
            ));
        }
        self.check_latent(zs, self.model.config.ds_dim, "z_s")?;
        let mut levels = vec![self.base(zs, "g_s")?];
        for l in 1..self.model.config.levels() {
            let h = self.up(*levels.last().expect("non-empty"), "g_s", l)?;
            levels.push(h);
        }
        Ok(levels)
    }

    /// Rendering generator: `z_r` enters at the base; pyramid level `l` is
    /// concatenated onto the renderer's level-`l` features before the next
    /// convolution. Output `[N, 3, H, W]` through tanh.
    pub fn render(&mut self, domain: Domain, zr: Var, pyramid: &[Var]) -> Result<Var> {
        self.check_domain(domain)?;
        let c = self.model.config.clone();
        if c.ablations.no_pra {
            return Err(Error::InvalidArgument(
                "model built without the structure generator; use generate".into(),
            ));
        }
        self.check_latent(zr, c.dr_dim, "z_r")?;
        let n = self.graph.shape(zr)[0];
        if pyramid.len() != c.levels() {
            return Err(shape_err!(
                "pyramid has {} levels, renderer expects {}",
                pyramid.len(),
                c.levels()
            ));
        }
        for (l, (&v, e)) in pyramid.iter().zip(c.extents()).enumerate() {
            let want = [n, c.widths[l], e, e];
            if self.graph.shape(v) != want {
                return Err(shape_err!(
                    "pyramid level {l} has shape {:?}, expected {want:?}",
                    self.graph.shape(v)
                ));
            }
        }
        self.render_stack(domain, zr, Some(pyramid))
    }

    fn render_stack(&mut self, domain: Domain, z: Var, pyramid: Option<&[Var]>) -> Result<Var> {
        let prefix = format!("g_r{}", domain.tag());
        let levels = self.model.config.levels();
        let mut h = self.base(z, &prefix)?;
        for l in 0..levels {
            if let Some(p) = pyramid {
                if self.model.injects(l) {
                    h = self.graph.channel_concat(h, p[l])?;
                }
            }
            if l + 1 < levels {
                h = self.up(h, &prefix, l + 1)?;
            }
        }
        let k = self.param(&format!("{prefix}.out.k"))?;
        let out = self.graph.conv2d(h, k, 1, OUT_KERNEL / 2)?;
        self.graph.tanh(out)
    }

    /// `G_domain(z_s, z_r)`.
    pub fn generate(&mut self, domain: Domain, zs: Var, zr: Var) -> Result<Var> {
        self.check_domain(domain)?;
        if self.model.config.ablations.no_pra {
            self.check_latent(zs, self.model.config.ds_dim, "z_s")?;
            self.check_latent(zr, self.model.config.dr_dim, "z_r")?;
            let z = self.graph.concat(zs, zr)?;
            self.render_stack(domain, z, None)
        } else {
            let pyramid = self.structure(zs)?;
            self.render(domain, zr, &pyramid)
        }
    }

    /// Generates both domains from one `z_s`; the feature pyramid is built
    /// once and read by both renderers. `zra` is ignored without the
    /// auxiliary domain.
    pub fn generate_pair(&mut self, zs: Var, zrt: Var, zra: Var) -> Result<GeneratedPair> {
        let has_aux = self.model.has_domain(Domain::Auxiliary);
        if self.model.config.ablations.no_pra {
            let target = self.generate(Domain::Target, zs, zrt)?;
            let auxiliary = if has_aux {
                Some(self.generate(Domain::Auxiliary, zs, zra)?)
            } else {
                None
            };
            return Ok(GeneratedPair {
                pyramid: None,
                target,
                auxiliary,
            });
        }
        let pyramid = self.structure(zs)?;
        let target = self.render(Domain::Target, zrt, &pyramid)?;
        let auxiliary = if has_aux {
            Some(self.render(Domain::Auxiliary, zra, &pyramid)?)
        } else {
            None
        };
        Ok(GeneratedPair {
            pyramid: Some(pyramid),
            target,
            auxiliary,
        })
    }

    /// `D_domain(x)` for `x` of shape `[N, 3, H, W]` in `[-1, 1]`.
    pub fn discriminate(&mut self, domain: Domain, x: Var) -> Result<DiscOut> {
        self.check_domain(domain)?;
        let r = self.model.config.resolution;
        let n = match *self.graph.shape(x) {
            [n, 3, h, w] if h == r && w == r => n,
            ref s => return Err(shape_err!("discriminator input must be [N, 3, {r}, {r}], got {s:?}")),
        };
        let leaky = Activation::LeakyRelu(LEAKY_SLOPE);
        let p = format!("d_{}", domain.tag());
        let k1 = self.param(&format!("{p}.c1.k"))?;
        let h1 = self.graph.conv2d(x, k1, 2, 1)?;
        let h1 = self.graph.activation(h1, leaky)?;
        let k2 = self.param(&format!("{p}.c2.k"))?;
        let h2 = self.graph.conv2d(h1, k2, 2, 1)?;
        let h2 = self.graph.activation(h2, leaky)?;
        let f2 = self.graph.flatten(h2)?;
        let (w, b) = (self.param(&format!("{p}.zr.w"))?, self.param(&format!("{p}.zr.b"))?);
        let zr_hat = self.graph.dense(f2, w, b)?;

        let t = self.model.tail_prefix(domain);
        let k3 = self.param(&format!("{t}.c3.k"))?;
        let h3 = self.graph.conv2d(h2, k3, 2, 1)?;
        let h3 = self.graph.activation(h3, leaky)?;
        let f3 = self.graph.flatten(h3)?;
        let (w, b) = (self.param(&format!("{t}.logit.w"))?, self.param(&format!("{t}.logit.b"))?);
        let logit = self.graph.dense(f3, w, b)?;
        let prob = self.graph.sigmoid(logit)?;
        let (w, b) = (self.param(&format!("{t}.zs.w"))?, self.param(&format!("{t}.zs.b"))?);
        let zs_hat = self.graph.dense(f3, w, b)?;
        debug_assert_eq!(self.graph.shape(prob), [n, 1]);
        Ok(DiscOut {
            logit,
            prob,
            zr_hat,
            zs_hat,
        })
    }
}
