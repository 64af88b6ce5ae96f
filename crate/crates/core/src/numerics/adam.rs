use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{GradMap, ParamGroup, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// Moment buffers and step counter for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zeroed state covering every parameter of `group`.
    pub fn new(config: AdamConfig, store: &ParamStore, group: ParamGroup) -> Self {
        let mut m = BTreeMap::new();
        for (name, t) in store.iter().filter(|(n, _)| group.contains_name(n)) {
            m.insert(name.clone(), Tensor::zeros(t.rows(), t.cols()));
        }
        Self {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected Adam update of the parameters covered by this state.
    /// `grads` must cover exactly those parameters.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap, direction: Direction) -> Result<()> {
        if let Some(missing) = self.m.keys().find(|n| !grads.contains_key(*n)) {
            return Err(Error::Contract(format!("no gradient for `{missing}`")));
        }
        if let Some(extra) = grads.keys().find(|n| !self.m.contains_key(*n)) {
            return Err(Error::Contract(format!(
                "gradient for `{extra}` outside the optimized group"
            )));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            let p = store.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = match direction {
                    Direction::Descend => gi,
                    Direction::Ascend => -gi,
                };
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("tdis.w", Tensor::scalar(value)).unwrap();
        s
    }

    fn grad(g: f64) -> GradMap {
        GradMap::from([("tdis.w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(0.7);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &s, ParamGroup::TDIS);
        st.step(&mut s, &grad(0.0), Direction::Descend).unwrap();
        assert_eq!(s.get("tdis.w").unwrap().item(), 0.7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut s = single(0.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.001), &s, ParamGroup::TDIS);
        st.step(&mut s, &grad(1.0), Direction::Descend).unwrap();
        assert!((s.get("tdis.w").unwrap().item() + 0.001).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        // g = 0.5 twice, lr = 0.01
        // t=1: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25, step = 0.01*0.5/(0.5+1e-8)
        // t=2: m = 0.095, v = 0.00049975, m_hat = 0.095/0.19, v_hat = 0.00049975/0.001999
        let mut s = single(1.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s, ParamGroup::TDIS);
        st.step(&mut s, &grad(0.5), Direction::Descend).unwrap();
        st.step(&mut s, &grad(0.5), Direction::Descend).unwrap();
        let s1 = 0.01 * 0.5 / (0.5 + 1e-8);
        let s2 = 0.01 * (0.095 / 0.19) / ((0.000_499_75f64 / 0.001_999).sqrt() + 1e-8);
        let expected = 1.0 - s1 - s2;
        assert!((s.get("tdis.w").unwrap().item() - expected).abs() < 1e-12);
    }

    #[test]
    fn ascend_equals_descend_on_negated_loss() {
        let mut a = single(0.3);
        let mut b = single(0.3);
        let mut sa = AdamState::new(AdamConfig::with_lr(0.05), &a, ParamGroup::TDIS);
        let mut sb = sa.clone();
        for g in [0.4, -1.3, 2.2] {
            sa.step(&mut a, &grad(g), Direction::Ascend).unwrap();
            sb.step(&mut b, &grad(-g), Direction::Descend).unwrap();
        }
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn missing_or_extra_gradient_is_contract_error() {
        let mut s = single(0.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &s, ParamGroup::TDIS);
        assert!(matches!(
            st.step(&mut s, &GradMap::new(), Direction::Descend),
            Err(Error::Contract(_))
        ));
        let mut g = grad(1.0);
        g.insert("dis.w".into(), Tensor::scalar(1.0));
        assert!(matches!(
            st.step(&mut s, &g, Direction::Descend),
            Err(Error::Contract(_))
        ));
        assert_eq!(st.t, 0);
    }
}
