//! Datasets: a seeded multi-modal synthetic generator, IDX ingestion and
//! mini-batch iteration.

mod batch;
pub mod idx;
mod synth;

pub use batch::{batches, Batch, Batches};
pub use idx::{idx_labels, idx_parse, idx_serialize_images, idx_serialize_labels, load_idx_dir};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Features `N_d×C×H×W` with class labels and, for synthetic data, the
/// mixture component each sample was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub mode_labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        mode_labels: Option<Vec<usize>>,
        classes: usize,
    ) -> Result<Self> {
        let (n, ..) = features.dims4()?;
        if labels.len() != n {
            return Err(Error::mismatch(&[n], &[labels.len()]));
        }
        if let Some(m) = &mode_labels {
            if m.len() != n {
                return Err(Error::mismatch(&[n], &[m.len()]));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            mode_labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.features.shape();
        [s[1], s[2], s[3]]
    }

    /// Copy the listed samples, in order, into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let [c, h, w] = self.sample_shape();
        let stride = c * h * w;
        let src = self.features.data();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidConfig(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        Ok(Batch {
            features: Tensor::new(&[indices.len(), c, h, w], data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            mode_labels: self
                .mode_labels
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
        })
    }
}
