//! Batch construction: identity-balanced PK batches for metric learning,
//! plain shuffled batches for dataset records without identity labels, and
//! size-proportional interleaving of batches from several datasets.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;

/// One planned batch: which dataset it comes from and which record indices
/// it contains. Every batch holds records from exactly one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedBatch {
    pub dataset: usize,
    pub records: Vec<usize>,
}

/// Builds one epoch of PK batches over `records`, which maps record index ->
/// person id. Each batch holds exactly `p` distinct identities with `k`
/// samples each. Identities are shuffled and chunked; a final partial chunk
/// is topped up with distinct identities drawn from the rest. Identities
/// with fewer than `k` samples contribute all of them plus samples re-drawn
/// with replacement. Fails when the pool holds fewer than `p` identities.
pub fn make_pk_batches(
    records: &[(usize, i64)],
    p: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, DataError> {
    assert!(p >= 2, "PK batches need at least 2 identities per batch, got p={p}");
    assert!(k >= 1, "PK batches need at least 1 sample per identity, got k={k}");
    let mut by_id: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &(idx, pid) in records {
        by_id.entry(pid).or_default().push(idx);
    }
    if by_id.len() < p {
        return Err(DataError::Composition(format!(
            "PK batches need at least p={p} identities, pool has {}",
            by_id.len()
        )));
    }

    let mut ids: Vec<i64> = by_id.keys().copied().collect();
    ids.shuffle(rng);

    let mut batches = Vec::new();
    let mut chunk_start = 0;
    while chunk_start < ids.len() {
        let mut chunk: Vec<i64> = ids[chunk_start..(chunk_start + p).min(ids.len())].to_vec();
        if chunk.len() < p {
            // Top up with distinct identities from outside the chunk.
            let mut pool: Vec<i64> = ids[..chunk_start].to_vec();
            pool.shuffle(rng);
            for extra in pool {
                if chunk.len() == p {
                    break;
                }
                if !chunk.contains(&extra) {
                    chunk.push(extra);
                }
            }
        }
        let mut batch = Vec::with_capacity(p * k);
        for pid in &chunk {
            let pool = &by_id[pid];
            let mut picked: Vec<usize> = if pool.len() >= k {
                let mut shuffled = pool.clone();
                shuffled.shuffle(rng);
                shuffled.truncate(k);
                shuffled
            } else {
                let mut all = pool.clone();
                while all.len() < k {
                    all.push(pool[rng.gen_range(0..pool.len())]);
                }
                all
            };
            batch.append(&mut picked);
        }
        batches.push(batch);
        chunk_start += p;
    }
    Ok(batches)
}

/// Builds one epoch of plain batches: indices shuffled, chunked to
/// `batch_size`, trailing remainder kept as a short batch.
pub fn make_plain_batches(
    indices: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    shuffled.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Plans `steps` training batches over several datasets. At each step one
/// dataset is drawn with probability proportional to its record count, and
/// the next whole batch from that dataset's queue is emitted — batches are
/// never mixed across datasets. When a queue empties, `refill` is called
/// with (dataset index, epoch counter) to produce the next epoch of batches.
pub fn interleave(
    sizes: &[usize],
    steps: usize,
    seed: u64,
    mut refill: impl FnMut(usize, usize) -> Vec<Vec<usize>>,
) -> Vec<PlannedBatch> {
    assert!(!sizes.is_empty(), "interleave needs at least one dataset");
    assert!(sizes.iter().all(|&s| s > 0), "every dataset must be non-empty");
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<VecDeque<Vec<usize>>> = vec![VecDeque::new(); sizes.len()];
    let mut epochs = vec![0usize; sizes.len()];
    let mut plan = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut pick = rng.gen_range(0..total);
        let mut ds = sizes.len() - 1;
        for (i, &s) in sizes.iter().enumerate() {
            if pick < s {
                ds = i;
                break;
            }
            pick -= s;
        }
        if queues[ds].is_empty() {
            let fresh = refill(ds, epochs[ds]);
            assert!(!fresh.is_empty(), "refill produced no batches for dataset {ds}");
            epochs[ds] += 1;
            queues[ds].extend(fresh);
        }
        let records = queues[ds].pop_front().expect("queue refilled above");
        plan.push(PlannedBatch { dataset: ds, records });
    }
    plan
}
