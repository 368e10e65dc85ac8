//! Mini-batch schedules for incremental EM.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// `size = None` (or `Some(M)`) runs full-batch EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchSpec {
    pub size: Option<usize>,
    pub seed: u64,
}

impl BatchSpec {
    pub fn full() -> Self {
        BatchSpec::default()
    }

    pub fn of(size: usize, seed: u64) -> Self {
        BatchSpec { size: Some(size), seed }
    }

    /// The effective batch size for `m` examples.
    pub fn resolve(&self, m: usize) -> Result<usize> {
        match self.size {
            None => Ok(m),
            Some(b) if (1..=m).contains(&b) => Ok(b),
            Some(b) => Err(Error::InvalidBatch { batch: b, examples: m }),
        }
    }
}

/// Contiguous slices of a seeded permutation of `0..m`, re-permuted at
/// the start of every epoch. The last batch of an epoch may be shorter.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    perm: Vec<usize>,
    size: usize,
    pos: usize,
    rng: rng::Rng,
}

impl BatchSchedule {
    pub fn new(m: usize, size: usize, seed: u64) -> Result<Self> {
        if size == 0 || size > m {
            return Err(Error::InvalidBatch {
                batch: size,
                examples: m,
            });
        }
        Ok(BatchSchedule {
            perm: (0..m).collect(),
            size,
            pos: m,
            rng: rng::stream(seed, Stream::Batch),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.perm.len().div_ceil(self.size)
    }

    /// Next batch and whether it closes an epoch.
    pub fn next_batch(&mut self) -> (Vec<usize>, bool) {
        if self.pos >= self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.perm.len());
        let rows = self.perm[self.pos..end].to_vec();
        self.pos = end;
        (rows, end == self.perm.len())
    }
}
