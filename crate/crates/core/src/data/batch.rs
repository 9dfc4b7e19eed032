use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub mode_labels: Option<Vec<usize>>,
}

/// One epoch of mini-batches over a dataset.
#[derive(Debug)]
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    size: usize,
    cursor: usize,
}

/// Batches of `size` samples; the last one may be shorter. With `shuffle`
/// the order is a fresh permutation drawn from `rng`. A size larger than the
/// dataset yields one batch holding everything.
pub fn batches<'a>(ds: &'a Dataset, size: usize, rng: &mut Rng, shuffle: bool) -> Result<Batches<'a>> {
    if size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    if size > ds.len() {
        log::warn!(
            "batch size {size} exceeds dataset size {}; using a single batch",
            ds.len()
        );
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Ok(Batches {
        ds,
        order,
        size: size.min(ds.len()),
        cursor: 0,
    })
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.size).min(self.order.len());
        let batch = self.ds.gather(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}
