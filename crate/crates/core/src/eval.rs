//! Evaluation: synthesize unseen-class embeddings, fit a fresh softmax head
//! and score real test instances encoded by the task encoder.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowPartition, SplitSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{
    Activation, AdamConfig, AdamState, BatchNormState, Direction, ParamGroup, ParamStore, Tape, Tensor, Var,
};
use crate::rng::{gaussian, stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Zsl,
    Gzsl,
    Fusion,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Zsl => "zsl",
            Setting::Gzsl => "gzsl",
            Setting::Fusion => "fusion",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(Setting::Zsl),
            "gzsl" => Ok(Setting::Gzsl),
            "fusion" => Ok(Setting::Fusion),
            _ => Err(Error::config("setting", format!("unknown setting `{s}`"))),
        }
    }
}

/// Which classes to synthesize, how many samples each and with what noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisSpec {
    pub classes: Vec<usize>,
    pub samples: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// Labeled rows in embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concat(&self, other: &LabeledSet) -> Result<LabeledSet> {
        Ok(LabeledSet {
            features: Tensor::vconcat(&[&self.features, &other.features])?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
        })
    }
}

/// `samples` generated embeddings per class of `spec`, class by class.
/// `attributes` holds one row per dataset class.
pub fn synthesize_set(spec: &SynthesisSpec, attributes: &Tensor, model: &Model) -> Result<LabeledSet> {
    if spec.samples == 0 {
        return Err(Error::config("eval.samples", "must be at least 1"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::config("eval.sigma", "must be finite and >= 0"));
    }
    let mut rng = stream_rng(spec.seed, Stream::Synthesis);
    let mut parts = Vec::with_capacity(spec.classes.len());
    let mut labels = Vec::with_capacity(spec.classes.len() * spec.samples);
    for &c in &spec.classes {
        if c >= attributes.rows() {
            return Err(Error::config("eval.classes", format!("no attribute row for class {c}")));
        }
        let a = attributes.select_rows(&vec![c; spec.samples]);
        let z = gaussian(&mut rng, spec.samples, model.mgan.noise_dim(), spec.sigma);
        parts.push(model.mgan.generate(&model.params, &z, &a)?);
        labels.extend(std::iter::repeat_n(c, spec.samples));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(LabeledSet {
        features: Tensor::vconcat(&refs)?,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub slope: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            slope: 0.2,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::config("head", "hidden width and batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("head.lr", "must be finite and >= 0"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config("head.slope", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Softmax head: affine, batch norm, leaky ReLU, affine. Output `k` stands
/// for dataset class `classes[k]`.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub params: ParamStore,
    pub bn: BatchNormState,
    pub classes: Vec<usize>,
    slope: f64,
}

impl ClassifierHead {
    fn new(input: usize, cfg: &HeadConfig, classes: Vec<usize>, rng: &mut impl rand::Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        for (k, (i, o)) in [(input, cfg.hidden), (cfg.hidden, classes.len())]
            .into_iter()
            .enumerate()
        {
            let bound = 1.0 / (i as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
            params.insert(format!("head.l{k}.w"), Tensor::from_vec(i, o, draw(i * o))?)?;
            params.insert(format!("head.l{k}.b"), Tensor::from_vec(1, o, draw(o))?)?;
        }
        params.insert("head.bn.gamma", Tensor::full(1, cfg.hidden, 1.0))?;
        params.insert("head.bn.beta", Tensor::zeros(1, cfg.hidden))?;
        Ok(Self {
            params,
            bn: BatchNormState::new(cfg.hidden),
            classes,
            slope: cfg.slope,
        })
    }

    fn forward(&self, tape: &mut Tape, x: &Tensor, train: bool) -> Result<(Var, Option<crate::numerics::BatchStats>)> {
        let p = &self.params;
        let xv = tape.constant(x.clone());
        let w0 = tape.bind(p, "head.l0.w", train)?;
        let b0 = tape.bind(p, "head.l0.b", train)?;
        let gamma = tape.bind(p, "head.bn.gamma", train)?;
        let beta = tape.bind(p, "head.bn.beta", train)?;
        let w1 = tape.bind(p, "head.l1.w", train)?;
        let b1 = tape.bind(p, "head.l1.b", train)?;
        let h = tape.affine(xv, w0, b0)?;
        let (h, stats) = if train {
            let (h, s) = tape.batch_norm_train(h, gamma, beta, self.bn.eps)?;
            (h, Some(s))
        } else {
            let h = tape.batch_norm_eval(h, gamma, beta, &self.bn.mean, &self.bn.var, self.bn.eps)?;
            (h, None)
        };
        let h = tape.activation(h, Activation::LeakyRelu(self.slope));
        Ok((tape.affine(h, w1, b1)?, stats))
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (y, _) = self.forward(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }

    /// Predicted dataset class ids; ties go to the lowest output index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self
            .logits(x)?
            .argmax_rows()
            .into_iter()
            .map(|k| self.classes[k])
            .collect())
    }
}

/// Fits a freshly initialized head on `set` by minibatch Adam. `classes`
/// lists the dataset class ids the head spans; minibatch order and
/// initialization come from the head stream of `seed`.
pub fn train_head(set: &LabeledSet, classes: &[usize], cfg: &HeadConfig, seed: u64) -> Result<ClassifierHead> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Contract("cannot fit a head on an empty set".into()));
    }
    if classes.is_empty() {
        return Err(Error::Contract("head needs at least one class".into()));
    }
    let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let targets = set
        .labels
        .iter()
        .map(|c| {
            index
                .get(c)
                .copied()
                .ok_or_else(|| Error::Index(format!("label {c} is not among the head classes")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = stream_rng(seed, Stream::Head);
    let mut head = ClassifierHead::new(set.features.cols(), cfg, classes.to_vec(), &mut rng)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &head.params, ParamGroup::HEAD);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            // a single-row batch has no usable batch statistics
            if chunk.len() < 2 && set.len() >= 2 {
                continue;
            }
            let x = set.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| targets[r]).collect();
            let mut tape = Tape::new();
            let (logits, stats) = head.forward(&mut tape, &x, true)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?.params(&tape, &head.params, ParamGroup::HEAD)?;
            adam.step(&mut head.params, &grads, Direction::Descend)?;
            if let Some(s) = stats {
                head.bn.update(&s, chunk.len());
            }
        }
    }
    Ok(head)
}

/// Per-class top-1 accuracies and their unweighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
    /// requested classes without any test instance
    pub excluded: Vec<usize>,
}

/// Accuracy within each class of `classes`, averaged uniformly over the
/// classes that have at least one instance.
pub fn per_class_top1(predicted: &[usize], truth: &[usize], classes: &[usize]) -> Result<ClassAccuracy> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            op: "predictions",
            left: (predicted.len(), 1),
            right: (truth.len(), 1),
        });
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (p, t) in predicted.iter().zip(truth) {
        if let Some(e) = counts.get_mut(t) {
            e.1 += 1;
            if p == t {
                e.0 += 1;
            }
        }
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, (hit, n)) in counts {
        if n == 0 {
            log::warn!("class {c} has no test instances; excluded from the mean");
            excluded.push(c);
        } else {
            per_class.insert(c, hit as f64 / n as f64);
        }
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(ClassAccuracy {
        per_class,
        mean,
        excluded,
    })
}

pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

/// Mean accuracy of one fused source over its own unseen classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceMetrics {
    pub name: String,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub setting: Setting,
    pub per_class: BTreeMap<usize, f64>,
    pub excluded: Vec<usize>,
    pub u: f64,
    pub s: Option<f64>,
    pub h: Option<f64>,
    pub sources: Vec<SourceMetrics>,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    /// `setting,U,S,H,seed,config_hash`; S and H are empty when absent.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.setting,
            self.u,
            opt(self.s),
            opt(self.h),
            self.seed,
            self.config_hash
        )
    }

    /// The main line followed by one `fusion/<source>` line per source.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = vec![self.to_line()];
        for s in &self.sources {
            out.push(format!(
                "{}/{},{},,,{},{}",
                self.setting, s.name, s.u, self.seed, self.config_hash
            ));
        }
        out
    }
}

/// Everything evaluation needs besides the data and the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub samples: usize,
    pub sigma: f64,
    pub head: HeadConfig,
    pub seed: u64,
    pub config_hash: String,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            samples: 100,
            sigma: 1.0,
            head: HeadConfig::default(),
            seed: 0,
            config_hash: String::new(),
        }
    }
}

fn encode_rows(d: &Dataset, model: &Model, rows: &[usize]) -> Result<LabeledSet> {
    let x = d.gather(rows);
    Ok(LabeledSet {
        features: model.tae.encode(&model.params, &x)?,
        labels: rows.iter().map(|&r| d.labels()[r]).collect(),
    })
}

fn fit_and_score(
    train: &LabeledSet,
    classes: &[usize],
    tests: &[(&LabeledSet, &[usize])],
    spec: &EvalSpec,
) -> Result<Vec<ClassAccuracy>> {
    let head = train_head(train, classes, &spec.head, spec.seed)?;
    tests
        .iter()
        .map(|(set, cls)| per_class_top1(&head.predict(&set.features)?, &set.labels, cls))
        .collect()
}

/// Unseen-class accuracy of a head fitted only on synthetic unseen
/// embeddings, tested on every real unseen instance.
pub fn eval_zsl(d: &Dataset, split: &SplitSpec, model: &Model, spec: &EvalSpec) -> Result<MetricsReport> {
    let synth = synthesize_set(
        &SynthesisSpec {
            classes: split.unseen.clone(),
            samples: spec.samples,
            sigma: spec.sigma,
            seed: spec.seed,
        },
        d.attributes(),
        model,
    )?;
    let rows: Vec<usize> = split
        .unseen
        .iter()
        .flat_map(|&c| d.class_rows(c).iter().copied())
        .collect();
    let test = encode_rows(d, model, &rows)?;
    let acc = fit_and_score(&synth, &split.unseen, &[(&test, &split.unseen)], spec)?.remove(0);
    Ok(MetricsReport {
        setting: Setting::Zsl,
        u: acc.mean,
        per_class: acc.per_class,
        excluded: acc.excluded,
        s: None,
        h: None,
        sources: Vec::new(),
        seed: spec.seed,
        config_hash: spec.config_hash.clone(),
    })
}

/// Head over all classes, fitted on encoded real seen training rows plus
/// synthetic unseen embeddings; scored on held-out seen rows and all unseen
/// rows.
pub fn eval_gzsl(
    d: &Dataset,
    split: &SplitSpec,
    rows: &RowPartition,
    model: &Model,
    spec: &EvalSpec,
) -> Result<MetricsReport> {
    let real = encode_rows(d, model, &rows.train_rows(split))?;
    let synth = if spec.samples == 0 {
        LabeledSet {
            features: Tensor::zeros(0, model.tae.embed_dim()),
            labels: Vec::new(),
        }
    } else {
        synthesize_set(
            &SynthesisSpec {
                classes: split.unseen.clone(),
                samples: spec.samples,
                sigma: spec.sigma,
                seed: spec.seed,
            },
            d.attributes(),
            model,
        )?
    };
    let train = real.concat(&synth)?;
    let seen_test = encode_rows(d, model, &rows.seen_test)?;
    let unseen_test = encode_rows(d, model, &rows.unseen_test)?;
    let all: Vec<usize> = (0..d.num_classes()).collect();
    let mut acc = fit_and_score(
        &train,
        &all,
        &[(&unseen_test, &split.unseen), (&seen_test, &split.seen)],
        spec,
    )?;
    let s_acc = acc.pop().unwrap();
    let u_acc = acc.pop().unwrap();
    let mut per_class = u_acc.per_class;
    per_class.extend(s_acc.per_class);
    let mut excluded = u_acc.excluded;
    excluded.extend(s_acc.excluded);
    Ok(MetricsReport {
        setting: Setting::Gzsl,
        u: u_acc.mean,
        s: Some(s_acc.mean),
        h: Some(harmonic_mean(u_acc.mean, s_acc.mean)),
        per_class,
        excluded,
        sources: Vec::new(),
        seed: spec.seed,
        config_hash: spec.config_hash.clone(),
    })
}

/// The zero-shot protocol on a fused dataset, with accuracies also broken
/// down by source through the class offset table.
pub fn eval_fusion(d: &Dataset, split: &SplitSpec, model: &Model, spec: &EvalSpec) -> Result<MetricsReport> {
    let mut r = eval_zsl(d, split, model, spec)?;
    r.setting = Setting::Fusion;
    r.sources = d
        .sources
        .iter()
        .filter_map(|s| {
            let accs: Vec<f64> = r
                .per_class
                .iter()
                .filter(|(c, _)| s.contains(**c))
                .map(|(_, a)| *a)
                .collect();
            (!accs.is_empty()).then(|| SourceMetrics {
                name: s.name.clone(),
                u: accs.iter().sum::<f64>() / accs.len() as f64,
            })
        })
        .collect();
    Ok(r)
}

/// Projection of rows onto their top two principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `n x 2`
    pub coords: Tensor,
    /// variance along each component, largest first
    pub variances: [f64; 2],
}

pub fn pca2(x: &Tensor) -> Result<Projection> {
    let (n, d) = x.shape();
    let distinct = (1..n).any(|r| x.row(r) != x.row(0));
    if n < 2 || !distinct {
        return Err(Error::Degenerate("projection needs at least two distinct rows".into()));
    }
    let mean = x.column_means();
    let centered = nalgebra::DMatrix::from_fn(n, d, |r, c| x.get(r, c) - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = Tensor::zeros(n, 2);
    let mut variances = [0.0; 2];
    for (k, &i) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(i);
        let proj = &centered * v;
        for r in 0..n {
            coords.set(r, k, proj[r]);
        }
        variances[k] = eig.eigenvalues[i].max(0.0);
    }
    Ok(Projection { coords, variances })
}

/// Writes `pc1 pc2 label` rows.
pub fn export_projection(x: &Tensor, labels: &[usize], path: &Path) -> Result<Projection> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension {
            op: "projection labels",
            left: x.shape(),
            right: (labels.len(), 1),
        });
    }
    let p = pca2(x)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (r, y) in labels.iter().enumerate() {
        writeln!(w, "{} {} {y}", p.coords.get(r, 0), p.coords.get(r, 1))?;
    }
    w.flush()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_reproduces_reported_rows() {
        let round1 = |v: f64| (v * 1000.0).round() / 10.0;
        assert_eq!(round1(harmonic_mean(0.641, 0.773)), 70.1);
        assert_eq!(round1(harmonic_mean(0.348, 0.771)), 48.0);
        assert_eq!(harmonic_mean(0.3, 0.3), 0.3);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn per_class_mean_ignores_class_sizes() {
        let acc = per_class_top1(&[0, 0, 0, 0], &[0, 0, 0, 1], &[0, 1]).unwrap();
        assert_eq!(acc.mean, 0.5);
        let acc = per_class_top1(&[0, 1, 1], &[0, 1, 1], &[0, 1]).unwrap();
        assert_eq!(acc.mean, 1.0);
    }

    #[test]
    fn empty_class_is_excluded() {
        let acc = per_class_top1(&[0, 0], &[0, 0], &[0, 1]).unwrap();
        assert_eq!(acc.excluded, vec![1]);
        assert_eq!(acc.mean, 1.0);
    }

    #[test]
    fn separable_head_fits_perfectly() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            rows.push(vec![1.0 + t, -0.5 * t]);
            labels.push(3);
            rows.push(vec![-1.0 - t, 0.5 * t]);
            labels.push(7);
        }
        let set = LabeledSet {
            features: Tensor::from_rows(&rows).unwrap(),
            labels,
        };
        let cfg = HeadConfig {
            hidden: 8,
            epochs: 200,
            batch_size: 16,
            ..HeadConfig::default()
        };
        let head = train_head(&set, &[3, 7], &cfg, 5).unwrap();
        let acc = per_class_top1(&head.predict(&set.features).unwrap(), &set.labels, &[3, 7]).unwrap();
        assert_eq!(acc.mean, 1.0);
        let again = train_head(&set, &[3, 7], &cfg, 5).unwrap();
        assert!(again.params.bitwise_eq(&head.params));
    }

    #[test]
    fn single_class_head_always_predicts_it() {
        let set = LabeledSet {
            features: Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.1], vec![2.0, 1.0]]).unwrap(),
            labels: vec![4, 4, 4],
        };
        let head = train_head(&set, &[4], &HeadConfig::default(), 0).unwrap();
        let probe = Tensor::from_rows(&[vec![-9.0, 3.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(head.predict(&probe).unwrap(), vec![4, 4]);
    }

    #[test]
    fn empty_training_set_rejected() {
        let set = LabeledSet {
            features: Tensor::zeros(0, 2),
            labels: vec![],
        };
        assert!(matches!(
            train_head(&set, &[0], &HeadConfig::default(), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn projection_of_planar_data_keeps_variance() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, t.cos()]
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let p = pca2(&x).unwrap();
        assert_eq!(p.coords.rows(), 20);
        assert!(p.variances[0] >= p.variances[1]);
        let total = |t: &Tensor| -> f64 {
            let m = t.column_means();
            (0..t.rows())
                .map(|r| t.row(r).iter().zip(&m).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
                .sum()
        };
        assert!((total(&x) - total(&p.coords)).abs() < 1e-9);
    }

    #[test]
    fn projection_rejects_identical_rows() {
        let x = Tensor::full(5, 3, 1.5);
        assert!(matches!(pca2(&x), Err(Error::Degenerate(_))));
    }
}
