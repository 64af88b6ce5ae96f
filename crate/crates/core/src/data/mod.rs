//! Datasets, class splits, episode sampling and dataset fusion.

mod dataset;
mod episode;
mod fuse;
mod io;
mod split;
mod synthetic;

pub use dataset::{AccessAudit, Dataset, RowPartition, SourceInfo, SplitSpec};
pub use episode::{sample_episode, Block, Episode, EpisodeShape, Task};
pub use fuse::fuse_datasets;
pub use io::{load_dataset, read_split, save_dataset, write_split, FEATURES_MAGIC};
pub use split::split_classes;
pub use synthetic::{make_synthetic, SyntheticSpec};
