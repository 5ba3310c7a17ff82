//! Paired generators with a shared structure generator, and paired
//! discriminators with a shared tail and latent reconstruction heads.

mod checkpoint;
mod config;
mod session;

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BnMode, Graph, RunningStats, Tensor};
use crate::data::{tensor_images, Image};
use crate::metrics::LatentGenerator;
use crate::error::{shape_err, Error, Result};

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, Ablations, ModelConfig};
pub use session::{DiscOut, GeneratedPair, Session};

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const UP_KERNEL: usize = 4;
pub const OUT_KERNEL: usize = 3;
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Target,
    Auxiliary,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Target => "t",
            Domain::Auxiliary => "a",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Target => "target",
            Domain::Auxiliary => "auxiliary",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" | "t" => Ok(Domain::Target),
            "auxiliary" | "aux" | "a" => Ok(Domain::Auxiliary),
            _ => Err(Error::InvalidArgument(format!(
                "unknown domain `{s}` (expected target or auxiliary)"
            ))),
        }
    }
}

/// Optimizer partition of the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Generator,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: Group,
}

/// How an initial value is drawn.
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// All trainable tensors plus batch-norm running statistics. Shared
/// components exist once and are referenced by name from every path that
/// uses them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
    bn: Vec<(String, RunningStats)>,
    bn_index: HashMap<String, usize>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut m = Self {
            config,
            params: Vec::new(),
            index: HashMap::new(),
            bn: Vec::new(),
            bn_index: HashMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = m.config.clone();
        let (l, b) = (c.levels(), c.base_extent());
        let w = &c.widths;
        let ab = c.ablations;
        let (g, dg) = (Group::Generator, Group::Discriminator);
        let k = UP_KERNEL;

        if !ab.no_pra {
            m.push("g_s.fc.w", vec![c.ds_dim, w[0] * b * b], Init::Normal, g, &mut rng);
            m.push("g_s.fc.b", vec![w[0] * b * b], Init::Zeros, g, &mut rng);
            m.push_bn("g_s.bn0", w[0], &mut rng);
            for i in 1..l {
                m.push(&format!("g_s.up{i}.k"), vec![w[i - 1], w[i], k, k], Init::Normal, g, &mut rng);
                m.push_bn(&format!("g_s.bn{i}"), w[i], &mut rng);
            }
        }
        for d in m.domains() {
            let p = format!("g_r{}", d.tag());
            let zin = if ab.no_pra { c.ds_dim + c.dr_dim } else { c.dr_dim };
            m.push(&format!("{p}.fc.w"), vec![zin, w[0] * b * b], Init::Normal, g, &mut rng);
            m.push(&format!("{p}.fc.b"), vec![w[0] * b * b], Init::Zeros, g, &mut rng);
            m.push_bn(&format!("{p}.bn0"), w[0], &mut rng);
            for i in 1..l {
                let cin = w[i - 1] + if m.injects(i - 1) { w[i - 1] } else { 0 };
                m.push(&format!("{p}.up{i}.k"), vec![cin, w[i], k, k], Init::Normal, g, &mut rng);
                m.push_bn(&format!("{p}.bn{i}"), w[i], &mut rng);
            }
            let cin = w[l - 1] + if m.injects(l - 1) { w[l - 1] } else { 0 };
            m.push(&format!("{p}.out.k"), vec![3, cin, OUT_KERNEL, OUT_KERNEL], Init::Normal, g, &mut rng);
        }

        let [d0, d1, d2] = c.disc_widths;
        let (e2, e3) = (c.resolution / 4, c.resolution / 8);
        for d in m.domains() {
            let p = format!("d_{}", d.tag());
            m.push(&format!("{p}.c1.k"), vec![d0, 3, k, k], Init::Normal, dg, &mut rng);
            m.push(&format!("{p}.c2.k"), vec![d1, d0, k, k], Init::Normal, dg, &mut rng);
            m.push(&format!("{p}.zr.w"), vec![d1 * e2 * e2, c.dr_dim], Init::Normal, dg, &mut rng);
            m.push(&format!("{p}.zr.b"), vec![c.dr_dim], Init::Zeros, dg, &mut rng);
        }
        let tails: Vec<String> = if ab.no_shared_disc {
            m.domains().iter().map(|d| format!("d_{}.tail", d.tag())).collect()
        } else {
            vec!["d.tail".into()]
        };
        for t in tails {
            m.push(&format!("{t}.c3.k"), vec![d2, d1, k, k], Init::Normal, dg, &mut rng);
            m.push(&format!("{t}.logit.w"), vec![d2 * e3 * e3, 1], Init::Normal, dg, &mut rng);
            m.push(&format!("{t}.logit.b"), vec![1], Init::Zeros, dg, &mut rng);
            m.push(&format!("{t}.zs.w"), vec![d2 * e3 * e3, c.ds_dim], Init::Normal, dg, &mut rng);
            m.push(&format!("{t}.zs.b"), vec![c.ds_dim], Init::Zeros, dg, &mut rng);
        }
        Ok(m)
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, init: Init, group: Group, rng: &mut ChaCha8Rng) {
        let len = shape.iter().product();
        let data = match init {
            Init::Normal => {
                let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                (0..len).map(|_| normal.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
        };
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value: Tensor::new(shape, data).expect("consistent shape"),
            group,
        });
    }

    fn push_bn(&mut self, prefix: &str, channels: usize, rng: &mut ChaCha8Rng) {
        self.push(&format!("{prefix}.gamma"), vec![channels], Init::Ones, Group::Generator, rng);
        self.push(&format!("{prefix}.beta"), vec![channels], Init::Zeros, Group::Generator, rng);
        self.bn_index.insert(prefix.to_string(), self.bn.len());
        self.bn.push((prefix.to_string(), RunningStats::new(channels)));
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn domains(&self) -> Vec<Domain> {
        if self.config.ablations.no_aux {
            vec![Domain::Target]
        } else {
            vec![Domain::Target, Domain::Auxiliary]
        }
    }

    pub fn has_domain(&self, d: Domain) -> bool {
        d == Domain::Target || !self.config.ablations.no_aux
    }

    /// Whether the renderer concatenates pyramid level `level` onto its own
    /// features at that level.
    pub fn injects(&self, level: usize) -> bool {
        let ab = self.config.ablations;
        if ab.no_pra {
            false
        } else if ab.no_progressive {
            level + 1 == self.config.levels()
        } else {
            true
        }
    }

    /// Name prefix of the discriminator tail used by `domain`.
    pub fn tail_prefix(&self, domain: Domain) -> String {
        if self.config.ablations.no_shared_disc {
            format!("d_{}.tail", domain.tag())
        } else {
            "d.tail".into()
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.param_index(name)?].value)
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.param_index(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[(String, RunningStats)] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [(String, RunningStats)] {
        &mut self.bn
    }

    pub(crate) fn bn_slot(&self, name: &str) -> Result<usize> {
        self.bn_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no batch-norm layer `{name}`")))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter count per component (`g_s`, `g_rt`, `g_ra`, `d_t`, `d_a`,
    /// `d.tail`, ...), in first-appearance order.
    pub fn param_ledger(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let comp = match p.name.find(".tail") {
                Some(i) => &p.name[..i + 5],
                None => p.name.split('.').next().unwrap_or(&p.name),
            };
            match out.iter_mut().find(|(c, _)| c == comp) {
                Some((_, n)) => *n += p.value.len(),
                None => out.push((comp.to_string(), p.value.len())),
            }
        }
        out
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    fn check_latents(&self, z: &[Vec<f64>], dim: usize, what: &str) -> Result<Tensor> {
        if z.is_empty() {
            return Err(shape_err!("{what}: empty latent batch"));
        }
        if let Some(bad) = z.iter().find(|v| v.len() != dim) {
            return Err(shape_err!("{what}: latent has {} entries, expected {dim}", bad.len()));
        }
        Tensor::new(vec![z.len(), dim], z.concat())
    }

    /// Eval-mode generation, `[N, 3, H, W]` in `(-1, 1)`.
    pub fn generate(&mut self, domain: Domain, zs: &[Vec<f64>], zr: &[Vec<f64>]) -> Result<Tensor> {
        if zs.len() != zr.len() {
            return Err(shape_err!("{} z_s vs {} z_r latents", zs.len(), zr.len()));
        }
        let zs = self.check_latents(zs, self.config.ds_dim, "z_s")?;
        let zr = self.check_latents(zr, self.config.dr_dim, "z_r")?;
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, self, None, BnMode::Eval);
        let (zs, zr) = (s.graph.constant(zs), s.graph.constant(zr));
        let out = s.generate(domain, zs, zr)?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode feature pyramid, coarsest level first.
    pub fn structure(&mut self, zs: &[Vec<f64>]) -> Result<Vec<Tensor>> {
        let zs = self.check_latents(zs, self.config.ds_dim, "z_s")?;
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, self, None, BnMode::Eval);
        let zs = s.graph.constant(zs);
        let levels = s.structure(zs)?;
        Ok(levels.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Eval-mode discriminator outputs: probabilities `[N]`, `z_r` estimates
    /// `[N, Dr]` and `z_s` estimates `[N, Ds]`.
    pub fn discriminate(&mut self, domain: Domain, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, self, None, BnMode::Eval);
        let x = s.graph.constant(x.clone());
        let out = s.discriminate(domain, x)?;
        let n = g.shape(out.prob)[0];
        Ok((
            g.value(out.prob).clone().reshaped(vec![n])?,
            g.value(out.zr_hat).clone(),
            g.value(out.zs_hat).clone(),
        ))
    }
}

/// Eval-mode generator of one domain, for the ND estimators.
pub struct ModelGenerator {
    model: Model,
    domain: Domain,
}

impl ModelGenerator {
    pub fn new(model: Model, domain: Domain) -> Result<Self> {
        if !model.has_domain(domain) {
            return Err(Error::InvalidArgument(format!(
                "model built without the {domain} domain"
            )));
        }
        Ok(Self { model, domain })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl LatentGenerator for ModelGenerator {
    fn zs_dim(&self) -> usize {
        self.model.config.ds_dim
    }

    fn zr_dim(&self) -> usize {
        self.model.config.dr_dim
    }

    fn generate(&mut self, zs: &[Vec<f64>], zr: &[Vec<f64>]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(zs.len());
        for (s, r) in zs.chunks(EVAL_CHUNK).zip(zr.chunks(EVAL_CHUNK)) {
            out.extend(tensor_images(&self.model.generate(self.domain, s, r)?)?);
        }
        Ok(out)
    }
}
