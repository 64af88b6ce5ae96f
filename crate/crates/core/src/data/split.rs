use rand::seq::SliceRandom;

use crate::data::{Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Random class split: `round(C * seen_fraction)` seen classes, of which
/// `round(seen * sup_fraction)` form the support set and the rest the query
/// set.
pub fn split_classes(d: &Dataset, seen_fraction: f64, sup_fraction: f64, seed: u64) -> Result<SplitSpec> {
    for (key, f) in [("seen_fraction", seen_fraction), ("sup_fraction", sup_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(key, "must lie in (0, 1)"));
        }
    }
    let c = d.num_classes();
    let seen = (c as f64 * seen_fraction).round() as usize;
    let sup = (seen as f64 * sup_fraction).round() as usize;
    if seen == 0 || seen == c {
        return Err(Error::config(
            "seen_fraction",
            format!("leaves an empty seen or unseen set for {c} classes"),
        ));
    }
    if sup == 0 || sup == seen {
        return Err(Error::config(
            "sup_fraction",
            format!("leaves an empty support or query set for {seen} seen classes"),
        ));
    }
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Sampling));
    Ok(SplitSpec::new(
        perm[..seen].to_vec(),
        perm[seen..].to_vec(),
        perm[..sup].to_vec(),
        perm[sup..seen].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn classes(c: usize) -> Dataset {
        let labels: Vec<usize> = (0..c).collect();
        Dataset::new("d", Tensor::zeros(c, 1), Tensor::zeros(c, 1), labels).unwrap()
    }

    #[test]
    fn twelve_class_arithmetic() {
        let s = split_classes(&classes(12), 0.75, 0.67, 3).unwrap();
        assert_eq!(s.seen.len(), 9);
        assert_eq!(s.unseen.len(), 3);
        assert_eq!(s.support.len(), 6);
        assert_eq!(s.query.len(), 3);
        s.validate(12).unwrap();
    }

    #[test]
    fn disjoint_for_many_seeds() {
        let d = classes(12);
        for seed in 0..100 {
            let s = split_classes(&d, 0.75, 0.67, seed).unwrap();
            assert!(s.seen.iter().all(|c| !s.unseen.contains(c)));
            s.validate(12).unwrap();
        }
    }

    #[test]
    fn deterministic_and_rejects_empty_sets() {
        let d = classes(12);
        assert_eq!(
            split_classes(&d, 0.75, 0.5, 8).unwrap(),
            split_classes(&d, 0.75, 0.5, 8).unwrap()
        );
        assert!(matches!(split_classes(&d, 0.99, 0.5, 0), Err(Error::Config { .. })));
        assert!(matches!(
            split_classes(&classes(2), 0.5, 0.5, 0),
            Err(Error::Config { .. })
        ));
        assert!(matches!(split_classes(&d, 1.0, 0.5, 0), Err(Error::Config { .. })));
    }
}
