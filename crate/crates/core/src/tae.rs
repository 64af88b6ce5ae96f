//! Attribute-conditioned task adversarial autoencoder.
//!
//! The encoder maps features into an embedding space where tasks sampled in
//! one episode should be indistinguishable. A task discriminator sees
//! `[embedding ‖ attributes]` and predicts the task's position in the episode;
//! it is trained to minimize its cross-entropy while the encoder, decoder and
//! classifier minimize reconstruction error plus classification error minus
//! that same cross-entropy.

use serde::{Deserialize, Serialize};

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::numerics::{
    Activation, AdamConfig, AdamState, Direction, GradMap, Mlp, ParamGroup, ParamStore, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaeConfig {
    pub embed_dim: usize,
    /// hidden width of encoder and decoder; 0 means `4 * embed_dim`
    pub autoencoder_hidden: usize,
    /// hidden width of discriminator and classifier; 0 means `2 * embed_dim`
    pub head_hidden: usize,
    pub slope: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub lambda_cls: f64,
    pub lr_tc: f64,
    pub lr_tdis: f64,
    /// tanh on the encoder output, keeping embeddings in `[-1, 1]`
    pub bounded_embedding: bool,
}

impl Default for TaeConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            autoencoder_hidden: 0,
            head_hidden: 0,
            slope: 0.2,
            lambda_rec: 1.0,
            lambda_adv: 1.0,
            lambda_cls: 1.0,
            lr_tc: 1e-3,
            lr_tdis: 1e-3,
            bounded_embedding: false,
        }
    }
}

impl TaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("tae.embed_dim", "must be positive"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config("tae.slope", "must lie in (0, 1)"));
        }
        for (k, v) in [
            ("tae.lambda_rec", self.lambda_rec),
            ("tae.lambda_adv", self.lambda_adv),
            ("tae.lambda_cls", self.lambda_cls),
            ("tae.lr_tc", self.lr_tc),
            ("tae.lr_tdis", self.lr_tdis),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be a finite value >= 0"));
            }
        }
        Ok(())
    }

    fn ae_hidden(&self) -> usize {
        if self.autoencoder_hidden == 0 {
            4 * self.embed_dim
        } else {
            self.autoencoder_hidden
        }
    }

    pub fn embedding_activation(&self) -> Option<Activation> {
        self.bounded_embedding.then_some(Activation::Tanh)
    }

    fn head_hidden(&self) -> usize {
        if self.head_hidden == 0 {
            2 * self.embed_dim
        } else {
            self.head_hidden
        }
    }
}

/// Encoder, decoder, task discriminator and classifier architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct TaeNets {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub discriminator: Mlp,
    pub classifier: Mlp,
}

/// Rows of a whole episode, support and query of every task stacked in task
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignBatch {
    pub features: Tensor,
    pub attributes: Tensor,
    pub targets: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
}

impl AlignBatch {
    pub fn from_episode(episode: &Episode) -> Result<Self> {
        let mut feats = Vec::new();
        let mut attrs = Vec::new();
        let mut targets = Vec::new();
        let mut pseudo = Vec::new();
        for t in &episode.tasks {
            for b in [&t.support, &t.query] {
                feats.push(&b.features);
                attrs.push(&b.attributes);
                targets.extend_from_slice(&b.targets);
                pseudo.extend(std::iter::repeat_n(t.pseudo_label, b.len()));
            }
        }
        Ok(Self {
            features: Tensor::vconcat(&feats)?,
            attributes: Tensor::vconcat(&attrs)?,
            targets,
            pseudo_labels: pseudo,
        })
    }
}

/// Two-task batch from a single-task episode: task 0 is the drawn rows, task
/// 1 the same rows with every feature multiplied by `factor`.
pub fn scaled_pair(episode: &Episode, factor: f64) -> Result<AlignBatch> {
    let base = AlignBatch::from_episode(episode)?;
    let scaled = base.features.map(|v| v * factor);
    let n = base.targets.len();
    Ok(AlignBatch {
        features: Tensor::vconcat(&[&base.features, &scaled])?,
        attributes: Tensor::vconcat(&[&base.attributes, &base.attributes])?,
        targets: [base.targets.clone(), base.targets].concat(),
        pseudo_labels: [vec![0; n], vec![1; n]].concat(),
    })
}

/// Distance between the row means of `a` and `b`, divided by the pooled
/// spread (root of the summed per-dimension variance over both sets). Scale
/// free, so input and embedding spaces can be compared.
pub fn normalized_mean_gap(a: &Tensor, b: &Tensor) -> f64 {
    let (ma, mb) = (a.column_means(), b.column_means());
    let gap: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let ss = |t: &Tensor, m: &[f64]| -> f64 {
        (0..t.rows())
            .map(|r| t.row(r).iter().zip(m).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum()
    };
    let var = (ss(a, &ma) + ss(b, &mb)) / (a.rows() + b.rows()) as f64;
    gap / var.sqrt()
}

/// Value of the encoder-side objective and its three terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub discriminator_ce: f64,
    pub classifier_ce: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignReport {
    /// discriminator cross-entropy before its update
    pub loss_tdis: f64,
    /// encoder-side objective before its update
    pub loss_tc: f64,
}

/// Adam states of the two alignment players.
#[derive(Clone, Debug, PartialEq)]
pub struct TaeOptim {
    pub tdis: AdamState,
    pub tc: AdamState,
}

impl TaeOptim {
    pub fn new(cfg: &TaeConfig, store: &ParamStore) -> Self {
        Self {
            tdis: AdamState::new(AdamConfig::with_lr(cfg.lr_tdis), store, ParamGroup::TDIS),
            tc: AdamState::new(AdamConfig::with_lr(cfg.lr_tc), store, ParamGroup::TC),
        }
    }
}

impl TaeNets {
    pub fn new(feature_dim: usize, attr_dim: usize, tasks: usize, seen_classes: usize, cfg: &TaeConfig) -> Self {
        let act = Activation::LeakyRelu(cfg.slope);
        let (de, ah, hh) = (cfg.embed_dim, cfg.ae_hidden(), cfg.head_hidden());
        Self {
            encoder: Mlp::new("te", vec![feature_dim, ah, de], act, cfg.embedding_activation()),
            decoder: Mlp::new("td", vec![de, ah, feature_dim], act, None),
            discriminator: Mlp::new("tdis", vec![de + attr_dim, hh, tasks], act, None),
            classifier: Mlp::new("cls", vec![de, hh, seen_classes], act, None),
        }
    }

    pub fn init<R: rand::Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.encoder.init(store, rng)?;
        self.decoder.init(store, rng)?;
        self.discriminator.init(store, rng)?;
        self.classifier.init(store, rng)
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.dims[0]
    }

    pub fn encode(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.encoder.eval(store, x)
    }

    pub fn decode(&self, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
        self.decoder.eval(store, e)
    }

    pub fn task_discriminate(&self, store: &ParamStore, e: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.discriminator.eval(store, &e.hconcat(a)?)
    }

    pub fn classify(&self, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
        self.classifier.eval(store, e)
    }

    /// Discriminator cross-entropy on `[e ‖ a]` against pseudo-labels, with the
    /// discriminator trainable.
    pub fn build_tdis_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        e: Var,
        a: Var,
        pseudo: &[usize],
        trainable: bool,
    ) -> Result<Var> {
        let ea = tape.concat(e, a)?;
        let logits = self.discriminator.forward(tape, store, ea, trainable)?;
        tape.softmax_cross_entropy(logits, pseudo)
    }

    /// Encoder-side objective with the discriminator frozen.
    /// Returns the loss node and the nodes of its three terms.
    pub fn build_tc_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &AlignBatch,
        cfg: &TaeConfig,
    ) -> Result<(Var, [Var; 3])> {
        let x = tape.constant(batch.features.clone());
        let a = tape.constant(batch.attributes.clone());
        let e = self.encoder.forward(tape, store, x, true)?;
        let xr = self.decoder.forward(tape, store, e, true)?;
        let rec = tape.mse(x, xr)?;
        let adv = self.build_tdis_loss(tape, store, e, a, &batch.pseudo_labels, false)?;
        let logits = self.classifier.forward(tape, store, e, true)?;
        let cls = tape.softmax_cross_entropy(logits, &batch.targets)?;
        let t1 = tape.scale(rec, cfg.lambda_rec);
        let t2 = tape.scale(adv, -cfg.lambda_adv);
        let t3 = tape.scale(cls, cfg.lambda_cls);
        let s = tape.add(t1, t2)?;
        let total = tape.add(s, t3)?;
        Ok((total, [rec, adv, cls]))
    }

    /// Discriminator cross-entropy over every row of the episode; the
    /// discriminator minimizes this.
    pub fn loss_tdis(&self, store: &ParamStore, e: &Tensor, a: &Tensor, pseudo: &[usize]) -> Result<f64> {
        Ok(self.tdis_gradients(store, e, a, pseudo)?.0)
    }

    pub fn tdis_gradients(
        &self,
        store: &ParamStore,
        e: &Tensor,
        a: &Tensor,
        pseudo: &[usize],
    ) -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let ev = tape.constant(e.clone());
        let av = tape.constant(a.clone());
        let loss = self.build_tdis_loss(&mut tape, store, ev, av, pseudo, true)?;
        let grads = tape.backward(loss)?.params(&tape, store, ParamGroup::TDIS)?;
        Ok((tape.value(loss).item(), grads))
    }

    pub fn loss_tc(&self, store: &ParamStore, batch: &AlignBatch, cfg: &TaeConfig) -> Result<TcLoss> {
        let mut tape = Tape::new();
        let (total, [rec, adv, cls]) = self.build_tc_loss(&mut tape, store, batch, cfg)?;
        Ok(TcLoss {
            total: tape.value(total).item(),
            reconstruction: tape.value(rec).item(),
            discriminator_ce: tape.value(adv).item(),
            classifier_ce: tape.value(cls).item(),
        })
    }

    /// Gradients of the encoder-side objective over `group`. Asking for the
    /// discriminator group returns zeros: the discriminator is frozen here.
    pub fn tc_gradients(
        &self,
        store: &ParamStore,
        batch: &AlignBatch,
        cfg: &TaeConfig,
        group: ParamGroup,
    ) -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let (total, _) = self.build_tc_loss(&mut tape, store, batch, cfg)?;
        let grads = tape.backward(total)?.params(&tape, store, group)?;
        Ok((tape.value(total).item(), grads))
    }

    /// One Adam descent step on the discriminator cross-entropy, then one Adam
    /// descent step on the encoder-side objective, both on `batch`.
    pub fn align_step(
        &self,
        store: &mut ParamStore,
        batch: &AlignBatch,
        optim: &mut TaeOptim,
        cfg: &TaeConfig,
    ) -> Result<AlignReport> {
        let e = self.encode(store, &batch.features)?;
        let (loss_tdis, g) = self.tdis_gradients(store, &e, &batch.attributes, &batch.pseudo_labels)?;
        optim.tdis.step(store, &g, Direction::Descend)?;
        let (loss_tc, g) = self.tc_gradients(store, batch, cfg, ParamGroup::TC)?;
        optim.tc.step(store, &g, Direction::Descend)?;
        Ok(AlignReport { loss_tdis, loss_tc })
    }
}
