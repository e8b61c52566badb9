//! Seeded random train/holdout partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Redraw cap for partitions that miss a class.
pub const MAX_SPLIT_ATTEMPTS: usize = 1000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn has_both(labels: &[u8], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
    pos > 0 && pos < idx.len()
}

/// Number of held-out rows for a fraction: at least 2 (so a holdout can
/// contain both classes) and at most `n - 2`.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64).round() as usize;
    k.max(2).min(n.saturating_sub(2))
}

/// Random partition where both sides contain both classes. Returns
/// `(train, holdout)` with indices in ascending order.
pub fn random_split(labels: &[u8], n_holdout: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    if n_holdout < 2 || n_holdout + 2 > n {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {n_holdout} of {n} models"
        )));
    }
    let mut rng = rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        idx.shuffle(&mut rng);
        let (hold, train) = idx.split_at(n_holdout);
        if has_both(labels, hold) && has_both(labels, train) {
            let mut train = train.to_vec();
            let mut hold = hold.to_vec();
            train.sort_unstable();
            hold.sort_unstable();
            return Ok((train, hold));
        }
    }
    Err(Error::SplitRetries(MAX_SPLIT_ATTEMPTS))
}

/// Per-class random sample of `n_pos` poisoned and `n_neg` clean indices
/// drawn from `pool`, returned in ascending order.
pub fn stratified_sample(labels: &[u8], pool: &[usize], n_pos: usize, n_neg: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng(seed);
    let mut pos: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == 0).collect();
    if pos.len() < n_pos || neg.len() < n_neg {
        return Err(Error::InvalidArgument(format!(
            "requested {n_pos}+{n_neg} models from a pool of {}+{}",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out: Vec<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    out.sort_unstable();
    Ok(out)
}
