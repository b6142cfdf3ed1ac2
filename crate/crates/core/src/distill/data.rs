//! Deterministic batching over generated datasets.

use super::DistillError;
use crate::rng::Rng;
use crate::tasks::{Dataset, Target};
use crate::tensor::Tensor;

/// One batch of examples, padded to a common length.
#[derive(Debug, Clone)]
pub struct Batch {
    pub token_ids: Vec<Vec<usize>>,
    pub inputs_mask: Vec<Vec<u8>>,
    pub targets: Vec<Option<Target>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    /// The 0/1 inputs mask as a `[batch, positions]` constant tensor.
    pub fn mask_tensor(&self) -> Tensor {
        let data: Vec<f64> =
            self.inputs_mask.iter().flat_map(|row| row.iter().map(|&m| m as f64)).collect();
        Tensor::from_vec(data, &[self.len(), self.seq_len()]).expect("batch is rectangular")
    }
}

/// Splits a dataset into batches with a deterministic per-epoch shuffle.
pub struct DataLoader {
    dataset: Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
}

impl DataLoader {
    pub fn new(dataset: Dataset, batch_size: usize, seed: u64) -> Result<DataLoader, DistillError> {
        if batch_size == 0 {
            return Err(DistillError::Validation("batch_size must be >= 1".into()));
        }
        if dataset.is_empty() {
            return Err(DistillError::Validation("dataset is empty".into()));
        }
        Ok(DataLoader { dataset, batch_size, seed, shuffle: true })
    }

    /// A loader that preserves dataset order (evaluation, degeneracy tests).
    pub fn sequential(
        dataset: Dataset,
        batch_size: usize,
    ) -> Result<DataLoader, DistillError> {
        let mut loader = DataLoader::new(dataset, batch_size, 0)?;
        loader.shuffle = false;
        Ok(loader)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    /// The batches of one epoch (1-based), in deterministic order.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        if self.shuffle {
            let mut rng = Rng::new(Rng::derive(self.seed, 0xda7a_0000 + epoch as u64));
            rng.shuffle(&mut order);
        }
        order
            .chunks(self.batch_size)
            .map(|chunk| {
                let mut batch = Batch {
                    token_ids: Vec::with_capacity(chunk.len()),
                    inputs_mask: Vec::with_capacity(chunk.len()),
                    targets: Vec::with_capacity(chunk.len()),
                };
                for &i in chunk {
                    let ex = &self.dataset.examples[i];
                    batch.token_ids.push(ex.token_ids.clone());
                    batch.inputs_mask.push(ex.inputs_mask.clone());
                    batch.targets.push(ex.target.clone());
                }
                batch
            })
            .collect()
    }
}
