use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SamplerError};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: BTreeSet<u64>,
    pub val: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

impl FoldSplit {
    pub fn train_val(&self) -> BTreeSet<u64> {
        self.train.union(&self.val).copied().collect()
    }
}

/// Splits `ids` into `n` contiguous groups whose sizes differ by at most one.
fn groups(ids: &[u64], n: usize) -> Vec<&[u64]> {
    let (base, extra) = (ids.len() / n, ids.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for g in 0..n {
        let len = base + usize::from(g < extra);
        out.push(&ids[start..start + len]);
        start += len;
    }
    out
}

/// Per-scanner rotation folds.
///
/// Each scanner's images are shuffled with the stream `rng / name_key(scanner)` and cut
/// into `n_folds` groups `g_0..g_{n-1}`. Fold `k` tests on `g_k`, validates on
/// `g_{(k+1) mod n}` and trains on the rest.
pub fn make_folds(
    manifest: &DatasetManifest,
    n_folds: usize,
    rng: &RandomStream,
) -> Result<Vec<FoldSplit>, SamplerError> {
    if n_folds < 3 {
        return Err(SamplerError::InvalidFoldCount(n_folds));
    }
    let mut folds: Vec<FoldSplit> = (0..n_folds)
        .map(|k| FoldSplit {
            fold_index: k,
            train: BTreeSet::new(),
            val: BTreeSet::new(),
            test: BTreeSet::new(),
        })
        .collect();
    for (scanner, mut ids) in manifest.scanners() {
        if ids.len() < n_folds {
            return Err(SamplerError::TooFewImages {
                scanner: scanner.to_string(),
                count: ids.len(),
                n_folds,
            });
        }
        rng.derive_name(scanner).shuffle(&mut ids);
        let parts = groups(&ids, n_folds);
        for (k, fold) in folds.iter_mut().enumerate() {
            for (g, part) in parts.iter().enumerate() {
                let target = if g == k {
                    &mut fold.test
                } else if g == (k + 1) % n_folds {
                    &mut fold.val
                } else {
                    &mut fold.train
                };
                target.extend(part.iter().copied());
            }
        }
    }
    Ok(folds)
}
