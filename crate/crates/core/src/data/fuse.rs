use crate::data::{Dataset, SourceInfo, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Merges datasets that share a feature space.
///
/// Attribute rows are right-padded with zeros to the widest attribute
/// dimension, class ids are shifted by a per-source offset, and the class
/// splits are unioned (seen with seen, unseen with unseen). Feature and
/// attribute values are copied bitwise.
pub fn fuse_datasets(sources: &[&Dataset]) -> Result<Dataset> {
    if sources.len() < 2 {
        return Err(Error::Contract("fusion needs at least two datasets".into()));
    }
    let dx = sources[0].feature_dim();
    let da = sources.iter().map(|d| d.attr_dim()).max().unwrap();
    let total_classes: usize = sources.iter().map(|d| d.num_classes()).sum();

    let mut attributes = Tensor::zeros(total_classes, da);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut table = Vec::new();
    let mut names = Vec::new();
    let mut split = SplitSpec::new(vec![], vec![], vec![], vec![]);
    let mut all_split = true;
    let mut offset = 0;
    for d in sources {
        if d.feature_dim() != dx {
            return Err(Error::format(
                &d.name,
                None,
                format!("feature dimension {} differs from {dx}", d.feature_dim()),
            ));
        }
        for c in 0..d.num_classes() {
            attributes.row_mut(offset + c)[..d.attr_dim()].copy_from_slice(d.attributes().row(c));
        }
        feats.push(d.raw_features());
        labels.extend(d.labels().iter().map(|y| y + offset));
        match &d.class_names {
            Some(n) => names.extend(n.iter().map(|n| format!("{}/{n}", d.name))),
            None => names.extend((0..d.num_classes()).map(|c| format!("{}/{c}", d.name))),
        }
        match &d.split {
            Some(s) => {
                let shift = |v: &[usize]| v.iter().map(|c| c + offset).collect::<Vec<_>>();
                split.seen.extend(shift(&s.seen));
                split.unseen.extend(shift(&s.unseen));
                split.support.extend(shift(&s.support));
                split.query.extend(shift(&s.query));
            }
            None => all_split = false,
        }
        table.push(SourceInfo {
            name: d.name.clone(),
            class_offset: offset,
            num_classes: d.num_classes(),
            attr_dim: d.attr_dim(),
        });
        offset += d.num_classes();
    }
    let name = sources.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("&");
    let mut fused = Dataset::new(name, Tensor::vconcat(&feats)?, attributes, labels)?;
    fused.class_names = Some(names);
    fused.sources = table;
    if all_split {
        fused = fused.with_split(SplitSpec::new(split.seen, split.unseen, split.support, split.query))?;
    }
    Ok(fused)
}
