//! Named parameter storage and the parameter groups the optimizers act on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// The networks whose weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Module {
    /// task encoder
    Te,
    /// task decoder
    Td,
    /// task discriminator
    Tdis,
    /// classifier, shared between the autoencoder and the GAN
    Cls,
    /// generator
    G,
    /// critic
    Dis,
    /// final softmax head, fitted at evaluation time
    Head,
}

impl Module {
    pub const ALL: [Module; 7] = [
        Module::Te,
        Module::Td,
        Module::Tdis,
        Module::Cls,
        Module::G,
        Module::Dis,
        Module::Head,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Module::Te => "te",
            Module::Td => "td",
            Module::Tdis => "tdis",
            Module::Cls => "cls",
            Module::G => "g",
            Module::Dis => "dis",
            Module::Head => "head",
        }
    }

    pub fn of(name: &str) -> Option<Module> {
        let head = name.split('.').next()?;
        Module::ALL.into_iter().find(|m| m.prefix() == head)
    }
}

/// A set of modules updated together by one optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamGroup(pub &'static [Module]);

impl ParamGroup {
    /// encoder, decoder and classifier
    pub const TC: ParamGroup = ParamGroup(&[Module::Te, Module::Td, Module::Cls]);
    pub const TDIS: ParamGroup = ParamGroup(&[Module::Tdis]);
    /// generator and classifier
    pub const GC: ParamGroup = ParamGroup(&[Module::G, Module::Cls]);
    pub const DIS: ParamGroup = ParamGroup(&[Module::Dis]);
    pub const G: ParamGroup = ParamGroup(&[Module::G]);
    pub const TE: ParamGroup = ParamGroup(&[Module::Te]);
    pub const HEAD: ParamGroup = ParamGroup(&[Module::Head]);
    pub const ALL: ParamGroup = ParamGroup(&Module::ALL);

    pub fn contains(&self, m: Module) -> bool {
        self.0.contains(&m)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        Module::of(name).is_some_and(|m| self.contains(m))
    }
}

/// Map from parameter path (`module.layer.weight`) to its value.
///
/// Iteration order is lexicographic by name, which fixes the order of every
/// reduction that walks the store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if Module::of(&name).is_none() {
            return Err(Error::Contract(format!("`{name}` does not belong to a known module")));
        }
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self, group: ParamGroup) -> Vec<String> {
        self.params.keys().filter(|n| group.contains_name(n)).cloned().collect()
    }

    /// Copy of the parameters in `group`.
    pub fn subset(&self, group: ParamGroup) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(n, _)| group.contains_name(n))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
        }
    }

    /// Overwrites every parameter present in `other`.
    pub fn overwrite_from(&mut self, other: &ParamStore) -> Result<()> {
        for (n, t) in &other.params {
            let slot = self.get_mut(n)?;
            if slot.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "overwrite",
                    left: slot.shape(),
                    right: t.shape(),
                });
            }
            *slot = t.clone();
        }
        Ok(())
    }

    /// L2 distance to `other` over the parameters of `group`.
    pub fn distance(&self, other: &ParamStore, group: ParamGroup) -> f64 {
        self.params
            .iter()
            .filter(|(n, _)| group.contains_name(n))
            .filter_map(|(n, t)| other.params.get(n).map(|o| (t, o)))
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
    }

    pub fn bitwise_eq_in(&self, other: &ParamStore, group: ParamGroup) -> bool {
        self.params
            .iter()
            .filter(|(n, _)| group.contains_name(n))
            .all(|(n, t)| other.params.get(n).is_some_and(|o| o.bitwise_eq(t)))
    }

    pub fn round_f32(&mut self) {
        self.params.values_mut().for_each(Tensor::round_f32);
    }
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Elementwise `acc += g` over matching names; inserts missing entries.
pub fn accumulate(acc: &mut GradMap, g: &GradMap) {
    for (n, t) in g {
        match acc.get_mut(n) {
            Some(a) => a.add_assign(t),
            None => {
                acc.insert(n.clone(), t.clone());
            }
        }
    }
}

/// `store[n] += k * grads[n]` for every name in `grads`.
pub fn apply_step(store: &mut ParamStore, grads: &GradMap, k: f64) -> Result<()> {
    for (n, g) in grads {
        store.get_mut(n)?.axpy(k, g);
    }
    Ok(())
}
