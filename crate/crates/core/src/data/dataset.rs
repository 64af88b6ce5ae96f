use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Records which feature rows have been read.
///
/// Used to prove that no unseen-class features are consumed before
/// evaluation.
#[derive(Debug, Default)]
pub struct AccessAudit {
    touched: Vec<AtomicBool>,
}

impl AccessAudit {
    fn new(n: usize) -> Self {
        Self {
            touched: (0..n).map(|_| AtomicBool::new(false)).collect(),
        }
    }

    fn mark(&self, row: usize) {
        self.touched[row].store(true, Ordering::Relaxed);
    }

    pub fn touched_rows(&self) -> Vec<usize> {
        self.touched
            .iter()
            .enumerate()
            .filter(|(_, t)| t.load(Ordering::Relaxed))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn reset(&self) {
        self.touched.iter().for_each(|t| t.store(false, Ordering::Relaxed));
    }
}

impl Clone for AccessAudit {
    fn clone(&self) -> Self {
        Self {
            touched: self
                .touched
                .iter()
                .map(|t| AtomicBool::new(t.load(Ordering::Relaxed)))
                .collect(),
        }
    }
}

/// Seen/unseen class partition plus the support/query partition of the seen
/// classes. All lists are sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl SplitSpec {
    pub fn new(mut seen: Vec<usize>, mut unseen: Vec<usize>, mut support: Vec<usize>, mut query: Vec<usize>) -> Self {
        for v in [&mut seen, &mut unseen, &mut support, &mut query] {
            v.sort_unstable();
        }
        Self {
            seen,
            unseen,
            support,
            query,
        }
    }

    /// Checks disjointness and coverage against `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::config("split", msg));
        let seen: BTreeSet<_> = self.seen.iter().copied().collect();
        let unseen: BTreeSet<_> = self.unseen.iter().copied().collect();
        let sup: BTreeSet<_> = self.support.iter().copied().collect();
        let qry: BTreeSet<_> = self.query.iter().copied().collect();
        if seen.len() != self.seen.len()
            || unseen.len() != self.unseen.len()
            || sup.len() != self.support.len()
            || qry.len() != self.query.len()
        {
            return bad("duplicate class id".into());
        }
        if let Some(c) = seen.iter().chain(&unseen).find(|&&c| c >= num_classes) {
            return bad(format!("class {c} outside [0, {num_classes})"));
        }
        if !seen.is_disjoint(&unseen) {
            return bad("seen and unseen overlap".into());
        }
        if seen.len() + unseen.len() != num_classes {
            return bad("seen and unseen do not cover every class".into());
        }
        if !sup.is_disjoint(&qry) {
            return bad("support and query overlap".into());
        }
        let sq: BTreeSet<_> = sup.union(&qry).copied().collect();
        if sq != seen {
            return bad("support and query must partition the seen classes".into());
        }
        if self.support.is_empty() || self.query.is_empty() || self.unseen.is_empty() {
            return bad("support, query and unseen must be nonempty".into());
        }
        Ok(())
    }

    /// Position of `class` among the seen classes; this is the classifier
    /// target used during training.
    pub fn seen_index(&self, class: usize) -> Option<usize> {
        self.seen.binary_search(&class).ok()
    }

    pub fn unseen_index(&self, class: usize) -> Option<usize> {
        self.unseen.binary_search(&class).ok()
    }
}

/// One source dataset inside a fused dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceInfo {
    pub name: String,
    pub class_offset: usize,
    pub num_classes: usize,
    pub attr_dim: usize,
}

impl SourceInfo {
    pub fn contains(&self, class: usize) -> bool {
        (self.class_offset..self.class_offset + self.num_classes).contains(&class)
    }
}

/// Visual features, class attributes and instance labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    attributes: Tensor,
    labels: Vec<usize>,
    pub class_names: Option<Vec<String>>,
    pub split: Option<SplitSpec>,
    /// Offset table of a fused dataset; empty otherwise.
    pub sources: Vec<SourceInfo>,
    by_class: Vec<Vec<usize>>,
    audit: AccessAudit,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Tensor, attributes: Tensor, labels: Vec<usize>) -> Result<Self> {
        let name = name.into();
        let c = attributes.rows();
        if labels.len() != features.rows() {
            return Err(Error::Contract(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if !attributes.is_finite() {
            return Err(Error::Contract("non-finite attribute value".into()));
        }
        let mut by_class = vec![Vec::new(); c];
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Index(format!("label {y} at row {i} outside [0, {c})")));
            }
            by_class[y].push(i);
        }
        if let Some(empty) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Contract(format!("class {empty} has no instances")));
        }
        let audit = AccessAudit::new(labels.len());
        Ok(Self {
            name,
            features,
            attributes,
            labels,
            class_names: None,
            split: None,
            sources: Vec::new(),
            by_class,
            audit,
        })
    }

    pub fn with_split(mut self, split: SplitSpec) -> Result<Self> {
        split.validate(self.num_classes())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn split(&self) -> Result<&SplitSpec> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::config("split", format!("dataset `{}` has no class split", self.name)))
    }

    pub fn num_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attributes(&self) -> &Tensor {
        &self.attributes
    }

    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Feature rows at `rows`, recorded in the access audit.
    pub fn gather(&self, rows: &[usize]) -> Tensor {
        rows.iter().for_each(|&r| self.audit.mark(r));
        self.features.select_rows(rows)
    }

    /// Whole feature matrix; marks every row as read.
    pub fn features(&self) -> &Tensor {
        (0..self.labels.len()).for_each(|r| self.audit.mark(r));
        &self.features
    }

    /// Feature matrix for persistence and fusion, bypassing the audit.
    pub(crate) fn raw_features(&self) -> &Tensor {
        &self.features
    }

    pub fn audit(&self) -> &AccessAudit {
        &self.audit
    }

    /// Number of audited reads of rows whose class is in `classes`.
    pub fn touched_in(&self, classes: &[usize]) -> usize {
        self.audit
            .touched_rows()
            .into_iter()
            .filter(|&r| classes.contains(&self.labels[r]))
            .count()
    }

    pub fn attribute_rows(&self, classes: &[usize]) -> Tensor {
        self.attributes.select_rows(classes)
    }

    pub fn bitwise_eq(&self, other: &Dataset) -> bool {
        self.name == other.name
            && self.features.bitwise_eq(&other.features)
            && self.attributes.bitwise_eq(&other.attributes)
            && self.labels == other.labels
            && self.class_names == other.class_names
            && self.split == other.split
            && self.sources == other.sources
    }
}

/// Instance-level partition used for training and evaluation.
///
/// Every seen class keeps its last `ceil(fraction * n_c)` instances (at most
/// `n_c - 1`) as held-out test rows for the generalized setting; all other
/// seen rows are training rows. Unseen rows are never training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RowPartition {
    pub train_by_class: Vec<Vec<usize>>,
    pub seen_test: Vec<usize>,
    pub unseen_test: Vec<usize>,
}

impl RowPartition {
    pub fn new(d: &Dataset, split: &SplitSpec, seen_test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&seen_test_fraction) {
            return Err(Error::config("data.seen_test_fraction", "must lie in [0, 1)"));
        }
        let mut train_by_class = vec![Vec::new(); d.num_classes()];
        let mut seen_test = Vec::new();
        for &c in &split.seen {
            let rows = d.class_rows(c);
            let n = rows.len();
            let held = ((seen_test_fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
            train_by_class[c] = rows[..n - held].to_vec();
            seen_test.extend_from_slice(&rows[n - held..]);
        }
        let unseen_test = split
            .unseen
            .iter()
            .flat_map(|&c| d.class_rows(c).iter().copied())
            .collect();
        Ok(Self {
            train_by_class,
            seen_test,
            unseen_test,
        })
    }

    /// Every training row of the seen classes, class by class.
    pub fn train_rows(&self, split: &SplitSpec) -> Vec<usize> {
        split
            .seen
            .iter()
            .flat_map(|&c| self.train_by_class[c].iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let x = Tensor::from_vec(6, 2, (0..12).map(f64::from).collect()).unwrap();
        let a = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        Dataset::new("tiny", x, a, vec![0, 0, 1, 1, 2, 2]).unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_empty_classes() {
        let x = Tensor::zeros(2, 2);
        let a = Tensor::zeros(2, 1);
        assert!(matches!(
            Dataset::new("d", x.clone(), a.clone(), vec![0, 2]),
            Err(Error::Index(_))
        ));
        assert!(matches!(Dataset::new("d", x, a, vec![0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn audit_records_gathered_rows() {
        let d = tiny();
        let _ = d.gather(&[1, 4]);
        assert_eq!(d.audit().touched_rows(), vec![1, 4]);
        assert_eq!(d.touched_in(&[2]), 1);
        d.audit().reset();
        assert!(d.audit().touched_rows().is_empty());
    }

    #[test]
    fn split_validation() {
        let ok = SplitSpec::new(vec![0, 1], vec![2], vec![0], vec![1]);
        assert!(ok.validate(3).is_ok());
        let overlap = SplitSpec::new(vec![0, 1], vec![1, 2], vec![0], vec![1]);
        assert!(overlap.validate(3).is_err());
        let bad_partition = SplitSpec::new(vec![0, 1], vec![2], vec![0], vec![0]);
        assert!(bad_partition.validate(3).is_err());
        assert_eq!(ok.seen_index(1), Some(1));
        assert_eq!(ok.seen_index(2), None);
    }

    #[test]
    fn partition_holds_out_seen_tail() {
        let d = tiny();
        let split = SplitSpec::new(vec![0, 1], vec![2], vec![0], vec![1]);
        let p = RowPartition::new(&d, &split, 0.2).unwrap();
        assert_eq!(p.train_by_class[0], vec![0]);
        assert_eq!(p.seen_test, vec![1, 3]);
        assert_eq!(p.unseen_test, vec![4, 5]);
        assert!(p.train_by_class[2].is_empty());
        let p0 = RowPartition::new(&d, &split, 0.0).unwrap();
        assert!(p0.seen_test.is_empty());
        assert_eq!(p0.train_rows(&split), vec![0, 1, 2, 3]);
    }
}
