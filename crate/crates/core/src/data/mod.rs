//! Toy 2D samplers and IDX image files.

mod idx;
mod toy;

pub use idx::{load_idx, load_idx_labels, write_idx_images, write_idx_labels, ImageDataset};
pub use toy::{eight_gaussian_centers, sample_toy, ToyDatasetId, TOY_BOX};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Where training batches come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Toy(ToyDatasetId),
    /// IDX image file (pixels scaled to `[0, 1]`).
    Idx(PathBuf),
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Toy(id) => id.as_str().to_string(),
            DatasetSpec::Idx(p) => format!("idx:{}", p.display()),
        }
    }
}

/// Loaded batch source. Toy data is sampled fresh for every batch; image
/// batches are drawn uniformly with replacement.
#[derive(Clone, Debug)]
pub enum DataSource {
    Toy(ToyDatasetId),
    Images(Tensor),
}

impl DataSource {
    pub fn open(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Toy(id) => Ok(DataSource::Toy(*id)),
            DatasetSpec::Idx(path) => Ok(DataSource::Images(load_idx(path)?.images)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DataSource::Toy(_) => 2,
            DataSource::Images(t) => t.cols(),
        }
    }

    pub fn batch(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::Dimension("batch size must be positive".into()));
        }
        match self {
            DataSource::Toy(id) => sample_toy(*id, n, rng),
            DataSource::Images(t) => {
                let idx: Vec<usize> = (0..n).map(|_| rng.below(t.rows())).collect();
                t.select_rows(&idx)
            }
        }
    }
}
