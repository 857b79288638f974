//! Joint source/target batching.
//!
//! Each epoch shuffles both domains independently with RNG streams derived
//! from `(seed, epoch)`. The shorter domain cycles, reshuffling at every
//! wrap, until the longer domain is exhausted. A final short pair is kept only
//! if it has at least two rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchPair, DomainDataset};
use crate::error::{EudaError, Result};

/// Row indices for one source/target batch pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

struct CyclingShuffle {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclingShuffle {
    fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Number of batch pairs [`paired_indices`] emits per epoch.
pub fn pairs_per_epoch(n_source: usize, n_target: usize, batch_size: usize) -> usize {
    let len = n_source.max(n_target);
    let full = len / batch_size;
    full + usize::from(len % batch_size >= 2)
}

pub fn paired_indices(
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<IndexPair>> {
    if batch_size < 2 {
        return Err(EudaError::Contract(format!("batch size {batch_size} is below 2")));
    }
    if n_source == 0 || n_target == 0 {
        return Err(EudaError::Contract("cannot batch an empty domain".into()));
    }
    let stream_len = n_source.max(n_target);
    let mut src = CyclingShuffle::new(n_source, seed, 2 * epoch);
    let mut tgt = CyclingShuffle::new(n_target, seed, 2 * epoch + 1);
    let mut pairs = Vec::with_capacity(pairs_per_epoch(n_source, n_target, batch_size));
    let mut emitted = 0;
    while emitted < stream_len {
        let size = batch_size.min(stream_len - emitted);
        if size < 2 {
            break;
        }
        pairs.push(IndexPair {
            source: src.take(size),
            target: tgt.take(size),
        });
        emitted += size;
    }
    Ok(pairs)
}

/// Materializes the batch pairs of one epoch.
pub fn paired_batches(
    source: &DomainDataset,
    target: &DomainDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<BatchPair>> {
    let labels = source
        .labels()
        .ok_or_else(|| EudaError::Contract("source dataset must be labeled".into()))?;
    if source.dim() != target.dim() {
        return Err(EudaError::Shape(format!(
            "source width {} differs from target width {}",
            source.dim(),
            target.dim()
        )));
    }
    paired_indices(source.len(), target.len(), batch_size, seed, epoch)?
        .into_iter()
        .map(|p| {
            let ys = p.source.iter().map(|&i| labels[i]).collect();
            BatchPair::new(source.gather_rows(&p.source), ys, target.gather_rows(&p.target))
        })
        .collect()
}
