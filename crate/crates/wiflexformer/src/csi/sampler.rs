//! Class-balanced batch sampling with replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::csi::CsiWindow;
use crate::error::{Error, Result};

/// One epoch of balanced batches over a window list.
///
/// Each draw picks a class uniformly from the `c` classes, then a window
/// uniformly within that class. An epoch emits `ceil(N / batch_size)` batches
/// of exactly `batch_size` index draws (sampling is with replacement).
/// Per-class index lists are ordered by `(sequence, offset)`, so draws depend
/// only on the seed, not on the order of the input list.
pub struct BalancedSampler {
    per_class: Vec<Vec<usize>>,
    batch_size: usize,
    batches_left: usize,
    rng: ChaCha20Rng,
}

/// Builds a [`BalancedSampler`] over `windows`; every class in `0..class_count`
/// must be present at least once.
pub fn balanced_batches(
    windows: &[CsiWindow],
    class_count: u16,
    batch_size: usize,
    seed: u64,
) -> Result<BalancedSampler> {
    if batch_size < 1 {
        return Err(Error::Validation("batch size must be >= 1".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); class_count as usize];
    for (i, w) in windows.iter().enumerate() {
        let c = w.label as usize;
        if c >= per_class.len() {
            return Err(Error::Validation(format!(
                "window label {} >= class count {}",
                c, class_count
            )));
        }
        per_class[c].push(i);
    }
    for (c, list) in per_class.iter_mut().enumerate() {
        if list.is_empty() {
            return Err(Error::Validation(format!(
                "class {} has no windows; the balanced sampler needs every class",
                c
            )));
        }
        list.sort_by_key(|&i| windows[i].source);
    }
    let n = windows.len();
    Ok(BalancedSampler {
        per_class,
        batch_size,
        batches_left: n.div_ceil(batch_size),
        rng: ChaCha20Rng::seed_from_u64(seed),
    })
}

impl Iterator for BalancedSampler {
    /// Indices into the window list the sampler was built over.
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.batches_left == 0 {
            return None;
        }
        self.batches_left -= 1;
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let class = self.rng.gen_range(0..self.per_class.len());
            let list = &self.per_class[class];
            batch.push(list[self.rng.gen_range(0..list.len())]);
        }
        Some(batch)
    }
}
