//! Alternating discriminator / generator optimization with checkpointing.

mod config;
pub mod losses;
mod run;
mod stream;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamMoments, BnMode, Graph, Tensor, Var};
use crate::data::sample_seed;
use crate::error::{shape_err, Error, Result};
use crate::model::{Checkpoint, Domain, Group, Model, Session};

pub use config::{TrainConfig, CONFIG_KEYS};
pub use run::{
    checkpoint_path, read_latest, run_training, RunOptions, RunOutcome, CONFIG_FILE, LATEST_FILE,
    LOG_FILE,
};
pub use stream::{BatchSource, ShuffledStream};

const LATENT_STREAM: u64 = 0x6c61_7465_6e74;
/// Stream ids passed to [`ShuffledStream::new`] for the two domains.
pub const TARGET_STREAM: u64 = 1;
pub const AUXILIARY_STREAM: u64 = 2;

/// Prior draws for a batch, each entry uniform on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    /// `[N, Ds]`
    pub zs: Tensor,
    /// `[N, Dr]`
    pub zrt: Tensor,
    /// `[N, Dr]`
    pub zra: Tensor,
}

impl Latents {
    pub fn sample(n: usize, ds: usize, dr: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |d: usize| {
            let data = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            Tensor::new(vec![n, d], data).expect("consistent shape")
        };
        let zs = draw(ds);
        let zrt = draw(dr);
        let zra = draw(dr);
        Self { zs, zrt, zra }
    }
}

/// Inputs of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub target: Tensor,
    /// Absent without the auxiliary domain.
    pub auxiliary: Option<Tensor>,
    pub latents: Latents,
}

/// Graph nodes of every loss term for one forward pass. Auxiliary terms are
/// `None` without the auxiliary domain.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub d_adv_t: Var,
    pub d_adv_a: Option<Var>,
    pub g_adv_t: Var,
    pub g_adv_a: Option<Var>,
    pub l_ns: Var,
    pub l_rec: Var,
    pub d_total: Var,
    pub g_total: Var,
    pub p_real_t: Var,
    pub p_fake_t: Var,
    pub p_real_a: Option<Var>,
    pub p_fake_a: Option<Var>,
}

/// Records all loss terms. Running batch-norm statistics are updated only
/// by the prior-noise generator pass, and only if `update_stats` is set.
pub fn forward_losses(
    s: &mut Session<'_>,
    batch: &StepBatch,
    cfg: &TrainConfig,
    update_stats: bool,
) -> Result<LossVars> {
    let has_aux = s.model().has_domain(Domain::Auxiliary);
    if has_aux != batch.auxiliary.is_some() {
        return Err(Error::InvalidArgument(if has_aux {
            "model has an auxiliary domain but no auxiliary batch was given".into()
        } else {
            "auxiliary batch given to a model without the auxiliary domain".into()
        }));
    }
    let (mu1, mu2) = (cfg.mu1, cfg.mu2);
    let (w1, w2) = cfg.effective_lambdas();
    let lat = &batch.latents;
    let xt = s.graph.constant(batch.target.clone());
    let xa = batch.auxiliary.clone().map(|a| s.graph.constant(a));
    let zs = s.graph.constant(lat.zs.clone());
    let zrt = s.graph.constant(lat.zrt.clone());
    let zra = s.graph.constant(lat.zra.clone());

    s.update_stats = update_stats;
    let fake = s.generate_pair(zs, zrt, zra)?;
    s.update_stats = false;

    let mut domains = vec![(Domain::Target, xt, fake.target, zrt)];
    if let (Some(xa), Some(ga)) = (xa, fake.auxiliary) {
        domains.push((Domain::Auxiliary, xa, ga, zra));
    }
    let mut d_adv = Vec::new();
    let mut g_adv = Vec::new();
    let mut probs = Vec::new();
    let mut l_ns = None;
    let mut l_rec = None;
    let acc = |g: &mut Graph, acc: Option<Var>, v: Var| -> Result<Option<Var>> {
        Ok(Some(match acc {
            Some(a) => g.add(a, v)?,
            None => v,
        }))
    };
    for (domain, real, gen, zr) in domains {
        let dr = s.discriminate(domain, real)?;
        let df = s.discriminate(domain, gen)?;
        d_adv.push(losses::d_adversarial(s.graph, dr.prob, df.prob)?);
        g_adv.push(losses::g_adversarial(s.graph, df.prob)?);
        probs.push((dr.prob, df.prob));

        let ns_s = losses::latent_l2(s.graph, zs, df.zs_hat)?;
        let ns_r = losses::latent_l2(s.graph, zr, df.zr_hat)?;
        let ns_s = s.graph.scale(ns_s, mu1)?;
        let ns_r = s.graph.scale(ns_r, mu2)?;
        let ns = s.graph.add(ns_s, ns_r)?;
        l_ns = acc(s.graph, l_ns, ns)?;

        let recon = s.generate(domain, dr.zs_hat, dr.zr_hat)?;
        let rec = losses::image_l1(s.graph, real, recon)?;
        l_rec = acc(s.graph, l_rec, rec)?;
    }
    let (l_ns, l_rec) = (l_ns.expect("one domain"), l_rec.expect("one domain"));
    let mut d_total = d_adv[0];
    let mut g_total = g_adv[0];
    if has_aux {
        d_total = s.graph.add(d_total, d_adv[1])?;
        g_total = s.graph.add(g_total, g_adv[1])?;
    }
    for total in [&mut d_total, &mut g_total] {
        *total = losses::weighted_add(s.graph, *total, w1, l_ns)?;
        *total = losses::weighted_add(s.graph, *total, w2, l_rec)?;
    }
    Ok(LossVars {
        d_adv_t: d_adv[0],
        d_adv_a: d_adv.get(1).copied(),
        g_adv_t: g_adv[0],
        g_adv_a: g_adv.get(1).copied(),
        l_ns,
        l_rec,
        d_total,
        g_total,
        p_real_t: probs[0].0,
        p_fake_t: probs[0].1,
        p_real_a: probs.get(1).map(|p| p.0),
        p_fake_a: probs.get(1).map(|p| p.1),
    })
}

/// Scalar values of one phase's loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTerms {
    pub adv_t: f64,
    pub adv_a: f64,
    pub l_ns: f64,
    pub l_rec: f64,
    pub total: f64,
}

/// One row of the training log. Values for an absent auxiliary domain are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Terms of the discriminator objective, before its update.
    pub d: PhaseTerms,
    /// Terms of the generator objective, after the discriminator update.
    pub g: PhaseTerms,
    /// Mean discriminator probabilities in the discriminator phase.
    pub dt_real: f64,
    pub dt_fake: f64,
    pub da_real: f64,
    pub da_fake: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,d_adv_t,d_adv_a,d_lns,d_lrec,d_loss,g_adv_t,g_adv_a,g_lns,g_lrec,g_loss,dt_real,dt_fake,da_real,da_fake";

    pub fn to_csv_row(&self) -> String {
        let v = [
            self.d.adv_t,
            self.d.adv_a,
            self.d.l_ns,
            self.d.l_rec,
            self.d.total,
            self.g.adv_t,
            self.g.adv_a,
            self.g.l_ns,
            self.g.l_rec,
            self.g.total,
            self.dt_real,
            self.dt_fake,
            self.da_real,
            self.da_fake,
        ];
        let mut s = self.step.to_string();
        for x in v {
            s.push(',');
            s.push_str(&x.to_string());
        }
        s
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 15 {
            return Err(Error::InvalidArgument(format!(
                "log row needs 15 fields, got {}",
                f.len()
            )));
        }
        let step = f[0]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad step `{}`", f[0])))?;
        let x = f[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let phase = |o: usize| PhaseTerms {
            adv_t: x[o],
            adv_a: x[o + 1],
            l_ns: x[o + 2],
            l_rec: x[o + 3],
            total: x[o + 4],
        };
        Ok(Self {
            step,
            d: phase(0),
            g: phase(5),
            dt_real: x[10],
            dt_fake: x[11],
            da_real: x[12],
            da_fake: x[13],
        })
    }
}

fn mean_of(g: &Graph, v: Option<Var>) -> f64 {
    v.map(|v| {
        let t = g.value(v);
        t.sum() / t.len() as f64
    })
    .unwrap_or(0.0)
}

fn checked(step: u64, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss term `{name}` at step {step} ({v})")))
    }
}

/// Model plus optimizer state; the whole mutable state of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: Vec<AdamMoments>,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let adam = model.params().iter().map(|p| AdamMoments::new(p.value.len())).collect();
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam_state(&self) -> &[AdamMoments] {
        &self.adam
    }

    /// Latent draws for 1-based step `step`; a pure function of the seed
    /// and the step.
    pub fn latents(&self, step: u64) -> Latents {
        let mut rng =
            ChaCha8Rng::seed_from_u64(sample_seed(sample_seed(self.config.seed, LATENT_STREAM), step));
        let m = &self.config.model;
        Latents::sample(self.config.batch_size, m.ds_dim, m.dr_dim, &mut rng)
    }

    /// Assembles the batch of step `step` from the two independent sources.
    pub fn batch(
        &self,
        step: u64,
        target: &mut dyn BatchSource,
        auxiliary: Option<&mut dyn BatchSource>,
    ) -> Result<StepBatch> {
        let r = self.config.model.resolution;
        for src in [Some(&*target), auxiliary.as_deref()].into_iter().flatten() {
            if src.resolution() != r {
                return Err(shape_err!(
                    "data resolution {} does not match configured resolution {r}",
                    src.resolution()
                ));
            }
        }
        let n = self.config.batch_size;
        let aux = if self.model.has_domain(Domain::Auxiliary) {
            let src = auxiliary.ok_or_else(|| {
                Error::InvalidArgument("auxiliary domain enabled but no auxiliary data".into())
            })?;
            Some(src.batch(step, n)?)
        } else {
            None
        };
        Ok(StepBatch {
            target: target.batch(step, n)?,
            auxiliary: aux,
            latents: self.latents(step),
        })
    }

    fn apply(&mut self, group: Group, grads: Vec<Option<Tensor>>) -> Result<()> {
        let adam = self.config.adam();
        for ((p, st), g) in self.model.params_mut().iter_mut().zip(&mut self.adam).zip(grads) {
            if p.group != group {
                continue;
            }
            if let Some(g) = g {
                adam_step(p.value.data_mut(), g.data(), st, &adam)?;
            }
        }
        Ok(())
    }

    fn phase(&mut self, group: Group, batch: &StepBatch, step: u64) -> Result<(PhaseTerms, [f64; 4])> {
        let cfg = self.config.clone();
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &mut self.model, Some(group), BnMode::Train);
        let lv = forward_losses(&mut s, batch, &cfg, group == Group::Generator)?;
        let (adv_t, adv_a, total, tag) = match group {
            Group::Discriminator => (lv.d_adv_t, lv.d_adv_a, lv.d_total, "d"),
            Group::Generator => (lv.g_adv_t, lv.g_adv_a, lv.g_total, "g"),
        };
        let gr = &*s.graph;
        let terms = PhaseTerms {
            adv_t: checked(step, &format!("{tag}_adv_t"), gr.item(adv_t))?,
            adv_a: checked(step, &format!("{tag}_adv_a"), adv_a.map_or(0.0, |v| gr.item(v)))?,
            l_ns: checked(step, &format!("{tag}_lns"), gr.item(lv.l_ns))?,
            l_rec: checked(step, &format!("{tag}_lrec"), gr.item(lv.l_rec))?,
            total: checked(step, &format!("{tag}_loss"), gr.item(total))?,
        };
        let probs = [
            mean_of(gr, Some(lv.p_real_t)),
            mean_of(gr, Some(lv.p_fake_t)),
            mean_of(gr, lv.p_real_a),
            mean_of(gr, lv.p_fake_a),
        ];
        s.graph.backward(total)?;
        let grads = s.param_grads();
        drop(s);
        self.apply(group, grads)?;
        Ok((terms, probs))
    }

    /// Discriminator update on `d_loss + λ1 L_ns + λ2 L_rec`; generator
    /// parameters are constants.
    pub fn discriminator_phase(&mut self, batch: &StepBatch) -> Result<(PhaseTerms, [f64; 4])> {
        self.phase(Group::Discriminator, batch, self.step + 1)
    }

    /// Generator update on `g_loss + λ1 L_ns + λ2 L_rec`; discriminator
    /// parameters are constants.
    pub fn generator_phase(&mut self, batch: &StepBatch) -> Result<PhaseTerms> {
        Ok(self.phase(Group::Generator, batch, self.step + 1)?.0)
    }

    /// One discriminator update followed by one generator update on the
    /// same batch.
    pub fn train_step(
        &mut self,
        target: &mut dyn BatchSource,
        auxiliary: Option<&mut dyn BatchSource>,
    ) -> Result<StepReport> {
        let step = self.step + 1;
        let batch = self.batch(step, target, auxiliary)?;
        let (d, p) = self.discriminator_phase(&batch)?;
        let g = self.generator_phase(&batch)?;
        self.step = step;
        Ok(StepReport {
            step,
            d,
            g,
            dt_real: p[0],
            dt_fake: p[1],
            da_real: p[2],
            da_fake: p[3],
        })
    }

    /// Model tensors plus optimizer moments (`adam/<param>/m`, `/v`, `/t`).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.model.export_tensors();
        for (p, st) in self.model.params().iter().zip(&self.adam) {
            tensors.push((format!("adam/{}/m", p.name), Tensor::from_vec(st.m.clone())));
            tensors.push((format!("adam/{}/v", p.name), Tensor::from_vec(st.v.clone())));
            tensors.push((format!("adam/{}/t", p.name), Tensor::scalar(st.t as f64)));
        }
        Checkpoint {
            config_hash: self.config.hash(),
            step: self.step,
            tensors,
        }
    }

    /// Restores a run; the checkpoint must come from a config with the same
    /// hash.
    pub fn from_checkpoint(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config_hash != config.hash() {
            return Err(Error::Checkpoint(
                "config hash in checkpoint header does not match the run config".into(),
            ));
        }
        let mut t = Self::new(config)?;
        t.model.import_tensors(ckpt)?;
        let names: Vec<String> = t.model.params().iter().map(|p| p.name.clone()).collect();
        for (name, st) in names.iter().zip(&mut t.adam) {
            let get = |k: &str, len: usize| -> Result<Vec<f64>> {
                let key = format!("adam/{name}/{k}");
                let v = ckpt
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
                if v.len() != len {
                    return Err(Error::Checkpoint(format!("tensor `{key}` has {} values, expected {len}", v.len())));
                }
                Ok(v.data().to_vec())
            };
            st.m = get("m", st.m.len())?;
            st.v = get("v", st.v.len())?;
            let tv = get("t", 1)?[0];
            if !(tv >= 0.0 && tv.fract() == 0.0) {
                return Err(Error::Checkpoint(format!("bad Adam step count {tv} for `{name}`")));
            }
            st.t = tv as u64;
        }
        t.step = ckpt.step;
        Ok(t)
    }
}
