use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowPartition, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stream_rng, Stream};

/// Tasks per episode, classes per task block and instances per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeShape {
    pub tasks: usize,
    pub classes: usize,
    pub shots: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self {
            tasks: 4,
            classes: 3,
            shots: 5,
        }
    }
}

/// Rows of one task block, grouped class by class.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub features: Tensor,
    pub attributes: Tensor,
    /// dataset class ids
    pub labels: Vec<usize>,
    /// positions of `labels` among the seen classes
    pub targets: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.dedup();
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub support: Block,
    pub query: Block,
    pub pseudo_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub tasks: Vec<Task>,
    pub seed: u64,
}

fn draw_block<R: rand::Rng>(
    d: &Dataset,
    split: &SplitSpec,
    rows: &RowPartition,
    pool: &[usize],
    shape: &EpisodeShape,
    rng: &mut R,
) -> Result<Block> {
    let picks = sample(rng, pool.len(), shape.classes).into_vec();
    let mut idx = Vec::with_capacity(shape.classes * shape.shots);
    let mut labels = Vec::with_capacity(idx.capacity());
    for p in picks {
        let class = pool[p];
        let avail = &rows.train_by_class[class];
        for i in sample(rng, avail.len(), shape.shots).into_vec() {
            idx.push(avail[i]);
            labels.push(class);
        }
    }
    let targets = labels
        .iter()
        .map(|&c| {
            split
                .seen_index(c)
                .ok_or_else(|| Error::Sampling(format!("class {c} is not a seen class")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Block {
        features: d.gather(&idx),
        attributes: d.attribute_rows(&labels),
        labels,
        targets,
    })
}

fn check_pool(name: &str, pool: &[usize], rows: &RowPartition, shape: &EpisodeShape) -> Result<()> {
    if pool.len() < shape.classes {
        return Err(Error::Sampling(format!(
            "{name} set has {} classes, {} needed per task",
            pool.len(),
            shape.classes
        )));
    }
    for &c in pool {
        let n = rows.train_by_class[c].len();
        if n < shape.shots {
            return Err(Error::Sampling(format!(
                "class {c} in the {name} set has {n} training instances, {} needed",
                shape.shots
            )));
        }
    }
    Ok(())
}

/// Samples `shape.tasks` tasks. Each task draws `shape.classes` support
/// classes and `shape.classes` query classes, then `shape.shots` training
/// instances per class, all without replacement inside the task. The
/// result is a pure function of the inputs and `seed`.
pub fn sample_episode(
    d: &Dataset,
    split: &SplitSpec,
    rows: &RowPartition,
    shape: &EpisodeShape,
    seed: u64,
) -> Result<Episode> {
    if shape.tasks == 0 || shape.classes == 0 || shape.shots == 0 {
        return Err(Error::config("episode", "tasks, classes and shots must be positive"));
    }
    check_pool("support", &split.support, rows, shape)?;
    check_pool("query", &split.query, rows, shape)?;
    let mut rng = stream_rng(seed, Stream::Sampling);
    let mut tasks = Vec::with_capacity(shape.tasks);
    for m in 0..shape.tasks {
        let support = draw_block(d, split, rows, &split.support, shape, &mut rng)?;
        let query = draw_block(d, split, rows, &split.query, shape, &mut rng)?;
        tasks.push(Task {
            support,
            query,
            pseudo_label: m,
        });
    }
    Ok(Episode { tasks, seed })
}
