//! Desk-scale stand-in for pre-extracted benchmark features.
//!
//! Each class draws an attribute vector once; its instances are a fixed linear
//! map of that vector plus isotropic Gaussian noise, optionally scaled per
//! class. Attribute inference is therefore possible by construction.

use serde::{Deserialize, Serialize};

use crate::data::{split_classes, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{gaussian, stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub classes: usize,
    pub unseen: usize,
    pub support_fraction: f64,
    pub feature_dim: usize,
    pub attr_dim: usize,
    pub per_class: usize,
    pub noise: f64,
    /// Multiplier applied to every feature.
    pub scale: f64,
    /// Optional per-class multipliers; empty means all ones.
    pub class_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            classes: 12,
            unseen: 3,
            support_fraction: 0.67,
            feature_dim: 32,
            attr_dim: 8,
            per_class: 50,
            noise: 0.5,
            scale: 1.0,
            class_scales: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synthetic.classes", self.classes),
            ("synthetic.unseen", self.unseen),
            ("synthetic.feature_dim", self.feature_dim),
            ("synthetic.attr_dim", self.attr_dim),
            ("synthetic.per_class", self.per_class),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.unseen >= self.classes {
            return Err(Error::config("synthetic.unseen", "must be smaller than classes"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::config("synthetic.noise", "must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("synthetic.scale", "must be positive"));
        }
        if !self.class_scales.is_empty() && self.class_scales.len() != self.classes {
            return Err(Error::config(
                "synthetic.class_scales",
                format!("needs {} entries", self.classes),
            ));
        }
        if self.class_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("synthetic.class_scales", "entries must be positive"));
        }
        Ok(())
    }

    pub fn seen_fraction(&self) -> f64 {
        (self.classes - self.unseen) as f64 / self.classes as f64
    }
}

/// Generates the dataset and its class split. Features are rounded to single
/// precision so the dataset survives a save/load cycle bitwise.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Data);
    let map = gaussian(
        &mut rng,
        spec.attr_dim,
        spec.feature_dim,
        1.0 / (spec.attr_dim as f64).sqrt(),
    );
    let attributes = gaussian(&mut rng, spec.classes, spec.attr_dim, 1.0);
    let means = attributes.matmul(&map)?;

    let n = spec.classes * spec.per_class;
    let mut features = Tensor::zeros(n, spec.feature_dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        let s = spec.scale * spec.class_scales.get(c).copied().unwrap_or(1.0);
        let noise = gaussian(&mut rng, spec.per_class, spec.feature_dim, spec.noise);
        for i in 0..spec.per_class {
            let row = c * spec.per_class + i;
            for (j, v) in features.row_mut(row).iter_mut().enumerate() {
                *v = s * (means.get(c, j) + noise.get(i, j));
            }
            labels.push(c);
        }
    }
    features.round_f32();

    let d = Dataset::new(spec.name.clone(), features, attributes, labels)?;
    let split = split_classes(&d, spec.seen_fraction(), spec.support_fraction, spec.seed)?;
    d.with_split(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::default();
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert!(a.bitwise_eq(&b));
        let c = make_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert!(!a.bitwise_eq(&c));
    }

    #[test]
    fn shape_arithmetic() {
        let d = make_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(d.num_instances(), 600);
        assert_eq!(d.feature_dim(), 32);
        assert_eq!(d.num_classes(), 12);
        let s = d.split().unwrap();
        assert_eq!((s.seen.len(), s.unseen.len()), (9, 3));
        assert_eq!((s.support.len(), s.query.len()), (6, 3));
    }

    #[test]
    fn vanishing_noise_collapses_classes() {
        let spec = SyntheticSpec {
            noise: 1e-12,
            per_class: 5,
            ..SyntheticSpec::default()
        };
        let d = make_synthetic(&spec).unwrap();
        let x = d.features();
        for c in 0..spec.classes {
            let rows = d.class_rows(c);
            for &r in rows {
                for j in 0..spec.feature_dim {
                    assert!((x.get(r, j) - x.get(rows[0], j)).abs() <= 1e-6 * x.get(rows[0], j).abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn class_scales_multiply_features() {
        let base = SyntheticSpec::default();
        let mut scales = vec![1.0; 12];
        scales[0] = 10.0;
        let d1 = make_synthetic(&base).unwrap();
        let d2 = make_synthetic(&SyntheticSpec {
            class_scales: scales,
            ..base
        })
        .unwrap();
        let r = d1.class_rows(0)[0];
        let (a, b) = (d1.features().get(r, 0), d2.features().get(r, 0));
        assert!((b - 10.0 * a).abs() < 1e-4 * b.abs().max(1.0));
        assert_eq!(
            d1.features().get(d1.class_rows(1)[0], 3),
            d2.features().get(d2.class_rows(1)[0], 3)
        );
    }

    #[test]
    fn invalid_spec_is_config_error() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(make_synthetic(&spec), Err(Error::Config { .. })));
    }
}
