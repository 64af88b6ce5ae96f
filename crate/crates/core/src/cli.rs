//! Run orchestration: configuration files, the training and evaluation
//! drivers, and the binary checkpoint format.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_dataset, make_synthetic, read_split, Dataset, EpisodeShape, RowPartition, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{eval_fusion, eval_gzsl, eval_zsl, export_projection, EvalSpec, HeadConfig, MetricsReport, Setting};
use crate::mgan::{EpisodeReport, InnerMode, MetaConfig};
use crate::model::{Model, TrainConfig, Trainer};
use crate::numerics::{AdamConfig, AdamState, BatchNormState, ParamStore, Precision, Tensor};
use crate::rng::{gaussian, stream_rng, RunRng, Stream};
use crate::tae::TaeConfig;

/// Where the data comes from. Exactly one of `path` and `synthetic` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// dataset directory as written by `gen-data` or `fuse`
    pub path: Option<PathBuf>,
    /// split file overriding the dataset's own `splits.txt`
    pub split: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// share of each seen class held out for generalized evaluation
    pub seen_test_fraction: f64,
}

/// Samples per unseen class and noise scale used when synthesizing for
/// evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub samples: usize,
    pub sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            split: None,
            synthetic: None,
            seen_test_fraction: 0.2,
        }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub disable_alignment: bool,
    pub data: DataConfig,
    pub episode: EpisodeShape,
    pub tae: TaeConfig,
    pub meta: MetaConfig,
    pub synthesis: SynthesisConfig,
    pub head: HeadConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 2000,
            out_dir: PathBuf::from("run"),
            precision: Precision::F64,
            disable_alignment: false,
            data: DataConfig::default(),
            episode: EpisodeShape::default(),
            tae: TaeConfig::default(),
            meta: MetaConfig::default(),
            synthesis: SynthesisConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("data", "set either `path` or `synthetic`, not both")),
            (None, None) => return Err(Error::config("data", "needs `path` or a `synthetic` table")),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        let f = self.data.seen_test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("data.seen_test_fraction", "must lie in (0, 1)"));
        }
        let EpisodeShape { tasks, classes, shots } = self.episode;
        if tasks == 0 || classes == 0 || shots == 0 {
            return Err(Error::config("episode", "tasks, classes and shots must be positive"));
        }
        if !(self.synthesis.sigma > 0.0 && self.synthesis.sigma.is_finite()) {
            return Err(Error::config("synthesis.sigma", "must be positive"));
        }
        if self.synthesis.samples == 0 {
            return Err(Error::config("synthesis.samples", "must be positive"));
        }
        self.head.validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            tae: self.tae.clone(),
            meta: self.meta.clone(),
            disable_alignment: self.disable_alignment,
            precision: self.precision,
        }
    }

    pub fn inner_mode(&self) -> InnerMode {
        self.meta.inner_mode
    }

    /// Resolved configuration as TOML. Parsing the output yields `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved configuration with `out_dir` blanked, so
    /// the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            samples: self.synthesis.samples,
            sigma: self.synthesis.sigma,
            head: self.head.clone(),
            seed: self.seed,
            config_hash: self.hash(),
        }
    }

    /// Loads or generates the dataset and resolves its split and row
    /// partition.
    pub fn load_data(&self) -> Result<(Dataset, SplitSpec, RowPartition)> {
        let mut d = match (&self.data.path, &self.data.synthetic) {
            (Some(p), None) => load_dataset(p)?,
            (None, Some(s)) => make_synthetic(s)?,
            _ => return Err(Error::config("data", "needs exactly one of `path` and `synthetic`")),
        };
        if let Some(p) = &self.data.split {
            d = d.with_split(read_split(p)?)?;
        }
        let split = d.split()?.clone();
        let rows = RowPartition::new(&d, &split, self.data.seen_test_fraction)?;
        Ok((d, split, rows))
    }
}

/// Parses TOML text into a validated configuration. Errors name the
/// offending key path.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a configuration file. Relative paths (`out_dir`,
/// `data.path`, `data.split`) are resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.data.path, &mut cfg.data.split].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if cfg.out_dir.is_relative() {
        cfg.out_dir = base.join(&cfg.out_dir);
    }
    Ok(cfg)
}

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TGMZC1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub episode: u64,
    pub seed: u64,
    /// word positions of the init, sampling and noise streams
    pub rng_positions: [u128; 3],
    pub params: ParamStore,
    pub adam: Vec<(String, AdamState)>,
    pub batch_norm: Vec<(String, BatchNormState)>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            episode: t.episode,
            seed: t.rng.seed,
            rng_positions: t.rng.positions(),
            params: t.model.params.clone(),
            adam: vec![("tdis".into(), t.optim.tdis.clone()), ("tc".into(), t.optim.tc.clone())],
            batch_norm: Vec::new(),
        }
    }

    /// Rebuilds the trainer for `cfg`, replacing its fresh state with the
    /// stored one.
    pub fn into_trainer(self, d: &Dataset, cfg: &RunConfig) -> Result<Trainer> {
        if self.config_hash != cfg.hash() {
            return Err(Error::Compatibility(format!(
                "checkpoint was written by config {}, current config is {}",
                self.config_hash,
                cfg.hash()
            )));
        }
        let mut t = Trainer::new(d, cfg.episode, cfg.train_config(), cfg.seed)?;
        if self.params.len() != t.model.params.len() {
            return Err(Error::Compatibility(
                "parameter set differs from the configured model".into(),
            ));
        }
        for (name, v) in self.params.iter() {
            let cur = t.model.params.get(name).map_err(|_| {
                Error::Compatibility(format!("checkpoint parameter `{name}` not in the configured model"))
            })?;
            if cur.shape() != v.shape() {
                return Err(Error::Compatibility(format!("shape of `{name}` differs")));
            }
        }
        t.model.params = self.params;
        for (name, state) in self.adam {
            match name.as_str() {
                "tdis" => t.optim.tdis = state,
                "tc" => t.optim.tc = state,
                _ => return Err(Error::Compatibility(format!("unknown optimizer state `{name}`"))),
            }
        }
        t.rng = RunRng::restore(self.seed, self.rng_positions);
        t.episode = self.episode;
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        w.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut w, &self.config_hash);
        w.extend_from_slice(&self.episode.to_le_bytes());
        w.extend_from_slice(&self.seed.to_le_bytes());
        for p in self.rng_positions {
            w.extend_from_slice(&p.to_le_bytes());
        }
        put_tensors(&mut w, self.params.iter());
        w.extend_from_slice(&(self.adam.len() as u32).to_le_bytes());
        for (name, s) in &self.adam {
            put_str(&mut w, name);
            w.extend_from_slice(&s.t.to_le_bytes());
            for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                w.extend_from_slice(&v.to_le_bytes());
            }
            put_tensors(&mut w, s.m.iter());
            put_tensors(&mut w, s.v.iter());
        }
        w.extend_from_slice(&(self.batch_norm.len() as u32).to_le_bytes());
        for (name, s) in &self.batch_norm {
            put_str(&mut w, name);
            w.extend_from_slice(&(s.mean.len() as u32).to_le_bytes());
            for v in s.mean.iter().chain(&s.var).chain([&s.momentum, &s.eps]) {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        w
    }

    /// Parses a complete checkpoint; nothing is returned unless every byte
    /// checks out.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, None, msg);
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 6 + 4 + 32 {
            return Err(bad("truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader {
            buf: body,
            pos: 6,
            path,
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)".into()));
        }
        let config_hash = r.string()?;
        let episode = r.u64()?;
        let seed = r.u64()?;
        let rng_positions = [r.u128()?, r.u128()?, r.u128()?];
        let mut params = ParamStore::new();
        for (name, t) in r.tensors()? {
            params.insert(name, t)?;
        }
        let mut adam = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let t = r.u64()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let m = r.tensors()?.into_iter().collect();
            let v = r.tensors()?.into_iter().collect();
            adam.push((name, AdamState { config, t, m, v }));
        }
        let mut batch_norm = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let width = r.u32()? as usize;
            let mean = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let var = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let momentum = r.f64()?;
            let eps = r.f64()?;
            batch_norm.push((
                name,
                BatchNormState {
                    mean,
                    var,
                    momentum,
                    eps,
                },
            ));
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config_hash,
            episode,
            seed,
            rng_positions,
            params,
            adam,
            batch_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn put_tensors<'a>(w: &mut Vec<u8>, tensors: impl Iterator<Item = (&'a String, &'a Tensor)>) {
    let tensors: Vec<_> = tensors.collect();
    w.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_str(w, name);
        w.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        w.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                None,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(path, None, "name is not UTF-8"))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..n {
            let name = self.string()?;
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|l| l.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
                .ok_or_else(|| Error::format(self.path, None, format!("tensor `{name}` overruns the file")))?;
            let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        Ok(out)
    }
}

/// Result of a completed training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub reports: Vec<EpisodeReport>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// audited reads of unseen-class feature rows during training
    pub unseen_rows_read: usize,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.toml";

/// Runs the configured number of episodes, writing the per-episode log, the
/// resolved config and the final checkpoint into `out_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (d, split, rows) = cfg.load_data()?;
    d.audit().reset();
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(CONFIG_FILE), cfg.to_toml())?;
    let log = cfg.out_dir.join(LOG_FILE);
    let mut w = BufWriter::new(fs::File::create(&log)?);
    writeln!(w, "{}", EpisodeReport::LOG_HEADER)?;
    let mut trainer = Trainer::new(&d, cfg.episode, cfg.train_config(), cfg.seed)?;
    let mut reports = Vec::with_capacity(cfg.episodes as usize);
    for _ in 0..cfg.episodes {
        let r = trainer.step(&d, &split, &rows)?;
        writeln!(w, "{}", r.to_log_line())?;
        reports.push(r);
    }
    w.flush()?;
    let unseen_rows_read = d.touched_in(&split.unseen);
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_trainer(&trainer, &cfg.hash()).save(&checkpoint)?;
    log::info!(
        "trained {} episodes, checkpoint at {}",
        cfg.episodes,
        checkpoint.display()
    );
    Ok(TrainOutcome {
        trainer,
        reports,
        checkpoint,
        log,
        unseen_rows_read,
    })
}

/// Evaluates a checkpoint and appends its metrics lines to
/// `out_dir/metrics.csv`. With `export`, the encoded test rows are also
/// projected to `out_dir/projection_<setting>.txt`.
pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Path, setting: Setting, export: bool) -> Result<MetricsReport> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (d, split, rows) = cfg.load_data()?;
    let model = ckpt.into_trainer(&d, cfg)?.model;
    let spec = cfg.eval_spec();
    let report = match setting {
        Setting::Zsl => eval_zsl(&d, &split, &model, &spec)?,
        Setting::Gzsl => eval_gzsl(&d, &split, &rows, &model, &spec)?,
        Setting::Fusion => {
            if d.sources.is_empty() {
                return Err(Error::config("setting", "fusion needs a fused dataset"));
            }
            eval_fusion(&d, &split, &model, &spec)?
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("metrics.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        writeln!(f, "setting,U,S,H,seed,config_hash")?;
    }
    for line in report.to_lines() {
        writeln!(f, "{line}")?;
    }
    if export {
        let test_rows: Vec<usize> = match setting {
            Setting::Gzsl => rows.seen_test.iter().chain(&rows.unseen_test).copied().collect(),
            _ => split
                .unseen
                .iter()
                .flat_map(|&c| d.class_rows(c).iter().copied())
                .collect(),
        };
        let e = model.tae.encode(&model.params, &d.gather(&test_rows))?;
        let labels: Vec<usize> = test_rows.iter().map(|&r| d.labels()[r]).collect();
        export_projection(&e, &labels, &cfg.out_dir.join(format!("projection_{setting}.txt")))?;
    }
    Ok(report)
}

/// Outcome of saving and reloading a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundtripReport {
    pub bytes: usize,
    pub tensors: usize,
    pub state_identical: bool,
    pub outputs_identical: bool,
}

impl RoundtripReport {
    pub fn ok(&self) -> bool {
        self.state_identical && self.outputs_identical
    }
}

/// Encoder, generator, critic and classifier outputs on a fixed probe batch.
pub fn probe_outputs(model: &Model, attributes: &Tensor, seed: u64) -> Result<Vec<Tensor>> {
    let mut rng = stream_rng(seed, Stream::Synthesis);
    let n = attributes.rows();
    let x = gaussian(&mut rng, n, model.tae.feature_dim(), 1.0);
    let z = gaussian(&mut rng, n, model.mgan.noise_dim(), 1.0);
    let e = model.tae.encode(&model.params, &x)?;
    let fake = model.mgan.generate(&model.params, &z, attributes)?;
    let score = model.mgan.critic_score(&model.params, &fake, attributes)?;
    let logits = model.tae.classify(&model.params, &e)?;
    Ok(vec![e, fake, score, logits])
}

/// Saves the trainer state to `path`, loads it back and compares every
/// tensor and the probe-batch outputs bitwise.
pub fn checkpoint_roundtrip(t: &Trainer, d: &Dataset, cfg: &RunConfig, path: &Path) -> Result<RoundtripReport> {
    let before = Checkpoint::from_trainer(t, &cfg.hash());
    before.save(path)?;
    let after = Checkpoint::load(path)?;
    let state_identical = before.params.bitwise_eq(&after.params)
        && before.adam.len() == after.adam.len()
        && before.adam.iter().zip(&after.adam).all(|((a, x), (b, y))| {
            a == b && x.t == y.t && x.config == y.config && bitwise_maps(&x.m, &y.m) && bitwise_maps(&x.v, &y.v)
        })
        && before.episode == after.episode
        && before.rng_positions == after.rng_positions
        && before.config_hash == after.config_hash;
    let tensors = after.params.len();
    let restored = after.into_trainer(d, cfg)?;
    let probe = d.attribute_rows(&(0..d.num_classes()).collect::<Vec<_>>());
    let a = probe_outputs(&t.model, &probe, cfg.seed)?;
    let b = probe_outputs(&restored.model, &probe, cfg.seed)?;
    let outputs_identical = a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y));
    Ok(RoundtripReport {
        bytes: fs::metadata(path)?.len() as usize,
        tensors,
        state_identical,
        outputs_identical,
    })
}

fn bitwise_maps(
    a: &std::collections::BTreeMap<String, Tensor>,
    b: &std::collections::BTreeMap<String, Tensor>,
) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((n, x), (m, y))| n == m && x.bitwise_eq(y))
}

/// One-paragraph summary of a checkpoint file, for `tgmz check`.
pub fn describe_checkpoint(c: &Checkpoint) -> String {
    let values: usize = c.params.iter().map(|(_, t)| t.len()).sum();
    let mut out = format!(
        "format {} v{}\nconfig {}\nepisode {}\nseed {}\nparameters {} tensors, {} values\n",
        String::from_utf8_lossy(CHECKPOINT_MAGIC),
        CHECKPOINT_VERSION,
        c.config_hash,
        c.episode,
        c.seed,
        c.params.len(),
        values
    );
    for (name, s) in &c.adam {
        out.push_str(&format!("adam {name}: {} steps, lr {}\n", s.t, s.config.lr));
    }
    out
}
