//! Dataset-level label operations: segmentation class merging and
//! deterministic identity subsetting.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::{DatasetManifest, Split};
use crate::error::DataError;
use crate::losses::SEG_IGNORE;

/// Pixelwise relabel. Every label present in `mask` must be covered by
/// `mapping`; the ignore sentinel passes through unchanged.
pub fn merge_classes(
    mask: &Array2<i64>,
    mapping: &BTreeMap<i64, i64>,
) -> Result<Array2<i64>, DataError> {
    let mut out = mask.clone();
    for v in out.iter_mut() {
        if *v == SEG_IGNORE {
            continue;
        }
        match mapping.get(v) {
            Some(&m) => *v = m,
            None => {
                return Err(DataError::Mapping(format!(
                    "mask label {v} is not covered by the class mapping"
                )))
            }
        }
    }
    Ok(out)
}

/// The default 20-class LIP -> 5-class mapping. Full-body garments (dress,
/// jumpsuit) are assigned to upper body; this is configurable by supplying a
/// different mapping to `merge_classes`.
pub fn lip_to_five_mapping() -> BTreeMap<i64, i64> {
    let pairs: [(i64, i64); 20] = [
        (0, 0),  // background
        (1, 1),  // hat -> head
        (2, 1),  // hair -> head
        (3, 2),  // glove -> upper
        (4, 1),  // sunglasses -> head
        (5, 2),  // upper-clothes -> upper
        (6, 2),  // dress -> upper
        (7, 2),  // coat -> upper
        (8, 3),  // socks -> lower
        (9, 3),  // pants -> lower
        (10, 2), // jumpsuit -> upper
        (11, 1), // scarf -> head
        (12, 3), // skirt -> lower
        (13, 1), // face -> head
        (14, 2), // left-arm -> upper
        (15, 2), // right-arm -> upper
        (16, 3), // left-leg -> lower
        (17, 3), // right-leg -> lower
        (18, 4), // left-shoe -> shoes
        (19, 4), // right-shoe -> shoes
    ];
    pairs.into_iter().collect()
}

/// Restricts the training split to `n` identities chosen deterministically
/// under `seed`. Training records of unselected identities are dropped;
/// records in other splits, and training records carrying no person id, are
/// kept unchanged.
pub fn limit_identities(
    manifest: &DatasetManifest,
    n: usize,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let ids: Vec<i64> = manifest.identities(Split::Train).into_iter().collect();
    if n == 0 || n > ids.len() {
        return Err(DataError::Bounds(format!(
            "requested {n} identities but the training split has {}",
            ids.len()
        )));
    }
    let mut shuffled = ids;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    shuffled.truncate(n);
    shuffled.sort_unstable();

    let mut out = manifest.clone();
    out.records.retain(|r| {
        if r.split != Split::Train {
            return true;
        }
        match r.person_id {
            Some(pid) if pid >= 0 => shuffled.binary_search(&pid).is_ok(),
            _ => true,
        }
    });
    out.size = out.records.len();
    Ok(out)
}
