use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `ceil(r·N)`, the batch size for split ratio `r ∈ (0, 1]`.
pub fn batch_size_from_ratio(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidHyperparameter(format!("split ratio must lie in (0, 1], got {ratio}")));
    }
    // guard against 0.1·10 = 1.0000000000000002 style round-up
    let raw = ratio * n as f64;
    let size = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    Ok((size as usize).clamp(1, n.max(1)))
}

/// Endless stream of mini-batches; each epoch partitions `0..N` into
/// consecutive chunks of `batch_size` (the last one may be smaller), after a
/// seeded per-epoch permutation when shuffling.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    shuffle: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::InvalidBatchSize { batch_size, n });
        }
        Ok(BatchStream {
            n,
            batch_size,
            shuffle,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        })
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            if self.shuffle {
                self.order.shuffle(&mut self.rng);
            }
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// All batches of `epochs` epochs, grouped per epoch.
pub fn sgd_schedule(n: usize, batch_size: usize, shuffle: bool, seed: u64, epochs: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    let mut stream = BatchStream::new(n, batch_size, shuffle, seed)?;
    let per_epoch = n.div_ceil(batch_size);
    Ok((0..epochs)
        .map(|_| (0..per_epoch).map(|_| stream.next().expect("stream is endless")).collect())
        .collect())
}
