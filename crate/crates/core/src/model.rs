//! The full trainable model: autoencoder and GAN networks over one parameter
//! store, plus the per-run training state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, Dataset, EpisodeShape, RowPartition, SplitSpec};
use crate::error::Result;
use crate::mgan::{train_episode, EpisodeReport, MetaConfig, MganNets};
use crate::numerics::{ParamStore, Precision};
use crate::rng::RunRng;
use crate::tae::{TaeConfig, TaeNets, TaeOptim};

/// Everything that shapes one training episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tae: TaeConfig,
    pub meta: MetaConfig,
    /// freeze the encoder at initialization and skip the alignment step
    pub disable_alignment: bool,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.tae.validate()?;
        self.meta.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub tae: TaeNets,
    pub mgan: MganNets,
    /// single storage for every network; the classifier appears once
    pub params: ParamStore,
}

impl Model {
    /// Builds and initializes every network from `rng`, autoencoder first.
    pub fn new<R: Rng>(
        feature_dim: usize,
        attr_dim: usize,
        seen_classes: usize,
        tasks: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let tae = TaeNets::new(feature_dim, attr_dim, tasks, seen_classes, &cfg.tae);
        let mgan = MganNets::new(cfg.tae.embed_dim, attr_dim, tae.classifier.clone(), &cfg.meta, &cfg.tae);
        let mut params = ParamStore::new();
        tae.init(&mut params, rng)?;
        mgan.init(&mut params, rng)?;
        if cfg.precision == Precision::F32 {
            params.round_f32();
        }
        Ok(Self { tae, mgan, params })
    }

    pub fn for_dataset<R: Rng>(d: &Dataset, tasks: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        Self::new(d.feature_dim(), d.attr_dim(), d.split()?.seen.len(), tasks, cfg, rng)
    }
}

/// Model plus optimizer state, episode counter and random streams.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optim: TaeOptim,
    pub rng: RunRng,
    pub episode: u64,
    pub config: TrainConfig,
    pub shape: EpisodeShape,
}

impl Trainer {
    pub fn new(d: &Dataset, shape: EpisodeShape, config: TrainConfig, seed: u64) -> Result<Self> {
        let mut rng = RunRng::new(seed);
        let model = Model::for_dataset(d, shape.tasks, &config, &mut rng.init)?;
        let optim = TaeOptim::new(&config.tae, &model.params);
        Ok(Self {
            model,
            optim,
            rng,
            episode: 0,
            config,
            shape,
        })
    }

    /// Samples the next episode from the training rows and trains on it.
    pub fn step(&mut self, d: &Dataset, split: &SplitSpec, rows: &RowPartition) -> Result<EpisodeReport> {
        let seed: u64 = self.rng.sampling.random();
        let episode = sample_episode(d, split, rows, &self.shape, seed)?;
        let report = train_episode(
            &mut self.model,
            &episode,
            &mut self.optim,
            &self.config,
            &mut self.rng.noise,
            self.episode,
        )?;
        self.episode += 1;
        Ok(report)
    }
}
