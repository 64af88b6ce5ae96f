//! Meta conditional GAN over task encodings.
//!
//! A generator maps `[z ‖ a]` to a synthetic embedding, a sigmoid-bounded
//! critic scores `[e ‖ a]`, and the classifier is the same network (same
//! stored weights) as the autoencoder's classifier. Training is first-order
//! meta-learning with plain gradient steps:
//!
//! * inner: from the base parameters, ascend the critic objective with step
//!   `alpha1` and descend the generator/classifier objective with step
//!   `alpha2` on the support blocks (pooled over tasks or per task);
//! * outer: evaluate the query-block gradients at the adapted parameters,
//!   sum them over tasks and apply them to the base parameters with steps
//!   `beta1` (ascent) and `beta2` (descent).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Block, Episode};
use crate::error::{Error, Result};
use crate::model::{Model, TrainConfig};
use crate::numerics::{
    accumulate, apply_step, Activation, GradMap, Mlp, ParamGroup, ParamStore, Precision, Tape, Tensor, Var,
};
use crate::rng::gaussian;
use crate::tae::{AlignBatch, TaeConfig, TaeOptim};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    /// one adapted parameter set for all tasks, from the pooled support loss
    #[default]
    Shared,
    /// one adapted parameter set per task
    PerTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub inner_mode: InnerMode,
    pub inner_steps: usize,
    /// noise width; 0 means the embedding width
    pub noise_dim: usize,
    /// standard deviation of the generator noise
    pub sigma: f64,
    /// 0 means `4 * embed_dim`
    pub generator_hidden: usize,
    /// 0 means `2 * embed_dim`
    pub critic_hidden: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha1: 1e-3,
            alpha2: 1e-3,
            beta1: 1e-4,
            beta2: 1e-4,
            inner_mode: InnerMode::Shared,
            inner_steps: 1,
            noise_dim: 0,
            sigma: 1.0,
            generator_hidden: 0,
            critic_hidden: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("meta.alpha1", self.alpha1),
            ("meta.alpha2", self.alpha2),
            ("meta.beta1", self.beta1),
            ("meta.beta2", self.beta2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "step sizes must be finite and >= 0"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("meta.sigma", "must be positive"));
        }
        if self.inner_steps == 0 {
            return Err(Error::config("meta.inner_steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn noise_dim(&self, embed_dim: usize) -> usize {
        if self.noise_dim == 0 {
            embed_dim
        } else {
            self.noise_dim
        }
    }
}

/// Generator and critic; the classifier is borrowed from the autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct MganNets {
    pub generator: Mlp,
    pub critic: Mlp,
    pub classifier: Mlp,
}

/// A task block after encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBlock {
    pub embeddings: Tensor,
    pub attributes: Tensor,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTask {
    pub support: EncodedBlock,
    pub query: EncodedBlock,
    pub pseudo_label: usize,
}

/// One noise row per real row of a task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNoise {
    pub support: Tensor,
    pub query: Tensor,
}

/// Critic and generator/classifier objectives with their gradients.
#[derive(Clone, Debug)]
pub struct ZslGrads {
    pub critic_obj: f64,
    pub gc_obj: f64,
    pub dis: GradMap,
    pub gc: GradMap,
}

/// Adapted critic and generator/classifier parameters: a single entry in
/// shared mode, one entry per task otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedParams {
    pub mode: InnerMode,
    pub params: Vec<ParamStore>,
}

impl AdaptedParams {
    pub fn for_task(&self, j: usize) -> &ParamStore {
        match self.mode {
            InnerMode::Shared => &self.params[0],
            InnerMode::PerTask => &self.params[j],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaReport {
    /// query critic objective at the adapted parameters, averaged over tasks
    pub critic_obj: f64,
    /// query generator/classifier objective, averaged over tasks
    pub gc_obj: f64,
    pub upd_norm_dis: f64,
    pub upd_norm_gc: f64,
}

/// Everything logged for one training episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeReport {
    pub episode: u64,
    pub loss_tdis: f64,
    pub loss_tc: f64,
    pub critic_obj: f64,
    pub gc_obj: f64,
    pub upd_norm_dis: f64,
    pub upd_norm_gc: f64,
}

impl EpisodeReport {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("loss_tdis", self.loss_tdis),
            ("loss_tc", self.loss_tc),
            ("critic_obj", self.critic_obj),
            ("gc_obj", self.gc_obj),
            ("upd_norm_dis", self.upd_norm_dis),
            ("upd_norm_gc", self.upd_norm_gc),
        ]
    }

    pub fn to_log_line(&self) -> String {
        let mut s = self.episode.to_string();
        for (_, v) in self.terms() {
            s.push_str(&format!(",{v}"));
        }
        s
    }

    pub const LOG_HEADER: &'static str = "episode,loss_tdis,loss_tc,critic_obj,gc_obj,upd_norm_dis,upd_norm_gc";
}

fn adapted_group() -> ParamGroup {
    ParamGroup(&[
        crate::numerics::Module::Cls,
        crate::numerics::Module::G,
        crate::numerics::Module::Dis,
    ])
}

impl MganNets {
    pub fn new(embed_dim: usize, attr_dim: usize, classifier: Mlp, cfg: &MetaConfig, tae: &TaeConfig) -> Self {
        let slope = tae.slope;
        let act = Activation::LeakyRelu(slope);
        let dz = cfg.noise_dim(embed_dim);
        let gh = if cfg.generator_hidden == 0 {
            4 * embed_dim
        } else {
            cfg.generator_hidden
        };
        let ch = if cfg.critic_hidden == 0 {
            2 * embed_dim
        } else {
            cfg.critic_hidden
        };
        Self {
            generator: Mlp::new("g", vec![dz + attr_dim, gh, embed_dim], act, tae.embedding_activation()),
            critic: Mlp::new("dis", vec![embed_dim + attr_dim, ch, 1], act, Some(Activation::Sigmoid)),
            classifier,
        }
    }

    /// Initializes generator and critic; the classifier belongs to the
    /// autoencoder.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.generator.init(store, rng)?;
        self.critic.init(store, rng)
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim() - self.attr_dim()
    }

    pub fn attr_dim(&self) -> usize {
        self.critic.input_dim() - self.generator.output_dim()
    }

    pub fn generate(&self, store: &ParamStore, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.generator.eval(store, &z.hconcat(a)?)
    }

    pub fn critic_score(&self, store: &ParamStore, e: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.critic.eval(store, &e.hconcat(a)?)
    }

    /// Builds both objectives of one block on `tape`, with critic, generator
    /// and classifier trainable:
    /// critic = mean D(e,a) - mean D(G(z,a),a),
    /// gc = -mean D(G(z,a),a) + CE(C(G(z,a)), y).
    pub fn build_zsl(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: &EncodedBlock,
        z: &Tensor,
    ) -> Result<(Var, Var)> {
        if z.rows() != block.embeddings.rows() {
            return Err(Error::Dimension {
                op: "noise rows",
                left: block.embeddings.shape(),
                right: z.shape(),
            });
        }
        let e = tape.constant(block.embeddings.clone());
        let a = tape.constant(block.attributes.clone());
        let zv = tape.constant(z.clone());
        let za = tape.concat(zv, a)?;
        let fake = self.generator.forward(tape, store, za, true)?;
        let real_in = tape.concat(e, a)?;
        let fake_in = tape.concat(fake, a)?;
        let d_real = self.critic.forward(tape, store, real_in, true)?;
        let d_fake = self.critic.forward(tape, store, fake_in, true)?;
        let m_real = tape.mean(d_real);
        let m_fake = tape.mean(d_fake);
        let critic_obj = tape.sub(m_real, m_fake)?;
        let logits = self.classifier.forward(tape, store, fake, true)?;
        let ce = tape.softmax_cross_entropy(logits, &block.targets)?;
        let neg_fake = tape.scale(m_fake, -1.0);
        let gc_obj = tape.add(neg_fake, ce)?;
        Ok((critic_obj, gc_obj))
    }

    /// Objective values of one block: (critic, generator/classifier).
    pub fn loss_zsl(&self, store: &ParamStore, block: &EncodedBlock, z: &Tensor) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let (c, g) = self.build_zsl(&mut tape, store, block, z)?;
        Ok((tape.value(c).item(), tape.value(g).item()))
    }

    pub fn zsl_gradients(&self, store: &ParamStore, block: &EncodedBlock, z: &Tensor) -> Result<ZslGrads> {
        let mut tape = Tape::new();
        let (c, g) = self.build_zsl(&mut tape, store, block, z)?;
        let dis = tape.backward(c)?.params(&tape, store, ParamGroup::DIS)?;
        let gc = tape.backward(g)?.params(&tape, store, ParamGroup::GC)?;
        Ok(ZslGrads {
            critic_obj: tape.value(c).item(),
            gc_obj: tape.value(g).item(),
            dis,
            gc,
        })
    }

    /// Sum over blocks of the per-block gradients, accumulated in block order.
    fn summed_gradients(&self, store: &ParamStore, blocks: &[(&EncodedBlock, &Tensor)]) -> Result<ZslGrads> {
        let mut total = ZslGrads {
            critic_obj: 0.0,
            gc_obj: 0.0,
            dis: GradMap::new(),
            gc: GradMap::new(),
        };
        for (b, z) in blocks {
            let g = self.zsl_gradients(store, b, z)?;
            total.critic_obj += g.critic_obj;
            total.gc_obj += g.gc_obj;
            accumulate(&mut total.dis, &g.dis);
            accumulate(&mut total.gc, &g.gc);
        }
        Ok(total)
    }

    /// Adapted parameters from the support blocks; `store` is not modified.
    pub fn inner_adapt(
        &self,
        store: &ParamStore,
        tasks: &[EncodedTask],
        noise: &[TaskNoise],
        cfg: &MetaConfig,
    ) -> Result<AdaptedParams> {
        if tasks.len() != noise.len() {
            return Err(Error::Contract("one noise draw per task is required".into()));
        }
        let adapt = |blocks: &[(&EncodedBlock, &Tensor)]| -> Result<ParamStore> {
            let adapted = adapt_with(store, cfg, |p| {
                let g = self.summed_gradients(p, blocks)?;
                Ok((g.dis, g.gc))
            })?;
            Ok(adapted.subset(adapted_group()))
        };
        let params = match cfg.inner_mode {
            InnerMode::Shared => {
                let blocks: Vec<_> = tasks.iter().zip(noise).map(|(t, n)| (&t.support, &n.support)).collect();
                vec![adapt(&blocks)?]
            }
            InnerMode::PerTask => tasks
                .iter()
                .zip(noise)
                .map(|(t, n)| adapt(&[(&t.support, &n.support)]))
                .collect::<Result<_>>()?,
        };
        Ok(AdaptedParams {
            mode: cfg.inner_mode,
            params,
        })
    }

    /// First-order meta step: query gradients evaluated at the adapted
    /// parameters, summed over tasks in order and applied to `store`.
    pub fn meta_update(
        &self,
        store: &mut ParamStore,
        tasks: &[EncodedTask],
        noise: &[TaskNoise],
        adapted: &AdaptedParams,
        cfg: &MetaConfig,
    ) -> Result<MetaReport> {
        let mut sum_dis = GradMap::new();
        let mut sum_gc = GradMap::new();
        let (mut critic_obj, mut gc_obj) = (0.0, 0.0);
        let mut at = store.clone();
        for (j, (t, n)) in tasks.iter().zip(noise).enumerate() {
            at.overwrite_from(adapted.for_task(j))?;
            let g = self.zsl_gradients(&at, &t.query, &n.query)?;
            critic_obj += g.critic_obj;
            gc_obj += g.gc_obj;
            accumulate(&mut sum_dis, &g.dis);
            accumulate(&mut sum_gc, &g.gc);
        }
        let before = store.subset(adapted_group());
        play_step(store, &sum_dis, &sum_gc, cfg.beta1, cfg.beta2)?;
        let k = tasks.len().max(1) as f64;
        Ok(MetaReport {
            critic_obj: critic_obj / k,
            gc_obj: gc_obj / k,
            upd_norm_dis: store.distance(&before, ParamGroup::DIS),
            upd_norm_gc: store.distance(&before, ParamGroup::GC),
        })
    }
}

/// One simultaneous plain-gradient step of both players: the critic
/// ascends along `dis` with step `k_dis`, the generator and classifier
/// descend along `gc` with step `k_gc`.
pub fn play_step(store: &mut ParamStore, dis: &GradMap, gc: &GradMap, k_dis: f64, k_gc: f64) -> Result<()> {
    apply_step(store, dis, k_dis)?;
    apply_step(store, gc, -k_gc)
}

/// `cfg.inner_steps` play steps with the inner step sizes, starting from a
/// copy of `base`. `grads` returns the (critic, gc) gradients at a point.
pub fn adapt_with<F>(base: &ParamStore, cfg: &MetaConfig, grads: F) -> Result<ParamStore>
where
    F: Fn(&ParamStore) -> Result<(GradMap, GradMap)>,
{
    let mut current = base.clone();
    for _ in 0..cfg.inner_steps {
        let (dis, gc) = grads(&current)?;
        play_step(&mut current, &dis, &gc, cfg.alpha1, cfg.alpha2)?;
    }
    Ok(current)
}

fn encode_block(model: &Model, b: &Block) -> Result<EncodedBlock> {
    Ok(EncodedBlock {
        embeddings: model.tae.encode(&model.params, &b.features)?,
        attributes: b.attributes.clone(),
        targets: b.targets.clone(),
    })
}

/// Encodes every task of `episode` with the current encoder.
pub fn encode_episode(model: &Model, episode: &Episode) -> Result<Vec<EncodedTask>> {
    episode
        .tasks
        .iter()
        .map(|t| {
            Ok(EncodedTask {
                support: encode_block(model, &t.support)?,
                query: encode_block(model, &t.query)?,
                pseudo_label: t.pseudo_label,
            })
        })
        .collect()
}

/// Support then query noise for each task, in task order.
pub fn draw_noise<R: Rng>(rng: &mut R, tasks: &[EncodedTask], noise_dim: usize, sigma: f64) -> Vec<TaskNoise> {
    tasks
        .iter()
        .map(|t| TaskNoise {
            support: gaussian(rng, t.support.embeddings.rows(), noise_dim, sigma),
            query: gaussian(rng, t.query.embeddings.rows(), noise_dim, sigma),
        })
        .collect()
}

/// One full training episode: alignment step (unless disabled), encoding of
/// every task with the updated encoder, inner adaptation on support blocks,
/// and the meta update on query blocks.
pub fn train_episode<R: Rng>(
    model: &mut Model,
    episode: &Episode,
    optim: &mut TaeOptim,
    cfg: &TrainConfig,
    noise_rng: &mut R,
    index: u64,
) -> Result<EpisodeReport> {
    let batch = AlignBatch::from_episode(episode)?;
    let align = if cfg.disable_alignment {
        let e = model.tae.encode(&model.params, &batch.features)?;
        crate::tae::AlignReport {
            loss_tdis: model
                .tae
                .loss_tdis(&model.params, &e, &batch.attributes, &batch.pseudo_labels)?,
            loss_tc: model.tae.loss_tc(&model.params, &batch, &cfg.tae)?.total,
        }
    } else {
        let r = model.tae.align_step(&mut model.params, &batch, optim, &cfg.tae)?;
        if cfg.precision == Precision::F32 {
            model.params.round_f32();
        }
        r
    };
    for (term, v) in [("loss_tdis", align.loss_tdis), ("loss_tc", align.loss_tc)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { episode: index, term });
        }
    }

    let tasks = encode_episode(model, episode)?;
    let noise = draw_noise(noise_rng, &tasks, model.mgan.noise_dim(), cfg.meta.sigma);
    let adapted = model.mgan.inner_adapt(&model.params, &tasks, &noise, &cfg.meta)?;
    let meta = model
        .mgan
        .meta_update(&mut model.params, &tasks, &noise, &adapted, &cfg.meta)?;
    if cfg.precision == Precision::F32 {
        model.params.round_f32();
    }
    let report = EpisodeReport {
        episode: index,
        loss_tdis: align.loss_tdis,
        loss_tc: align.loss_tc,
        critic_obj: meta.critic_obj,
        gc_obj: meta.gc_obj,
        upd_norm_dis: meta.upd_norm_dis,
        upd_norm_gc: meta.upd_norm_gc,
    };
    for (term, v) in report.terms() {
        if !v.is_finite() {
            return Err(Error::NonFinite { episode: index, term });
        }
    }
    Ok(report)
}
