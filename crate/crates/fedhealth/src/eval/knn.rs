//! K-nearest-neighbor baseline on flattened windows. Assumes the caller
//! hands it data on one normalization footing (the experiment driver
//! z-scores everything with the training-population statistics first).

use crate::data::HarDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Squared Euclidean distance over equally long flat vectors, four
/// accumulators to keep the summation order fixed.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut i = 0;
    while i + 4 <= a.len() {
        for lane in 0..4 {
            let d = a[i + lane] - b[i + lane];
            acc[lane] += d * d;
        }
        i += 4;
    }
    let mut rest = 0.0;
    while i < a.len() {
        let d = a[i] - b[i];
        rest += d * d;
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

/// Majority vote over the first `k` of `neighbors` (already sorted by
/// ascending distance). Vote ties go to the class whose nearest member
/// among the tied classes is closest.
fn vote(neighbors: &[(f64, u8)], k: usize) -> u8 {
    let k = k.min(neighbors.len());
    let mut counts = [0usize; 256];
    for &(_, label) in &neighbors[..k] {
        counts[label as usize] += 1;
    }
    let best = *counts.iter().max().expect("nonempty counts");
    // First neighbor whose class reaches the top count wins; scanning in
    // distance order implements the nearest-among-tied rule.
    neighbors[..k]
        .iter()
        .find(|(_, label)| counts[*label as usize] == best)
        .expect("k >= 1")
        .1
}

/// Fitted nearest-neighbor classifier: stores the flattened training
/// windows and the chosen k.
pub struct KnnModel {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<u8>,
    k: usize,
}

impl KnnModel {
    pub fn fit(train: &HarDataset, k: usize) -> Result<KnnModel> {
        if k == 0 {
            return Err(Error::invalid_input("k must be at least 1"));
        }
        if train.is_empty() {
            return Err(Error::invalid_input("empty training set"));
        }
        if k > train.len() {
            return Err(Error::invalid_input(format!(
                "k = {} exceeds the {} training samples",
                k,
                train.len()
            )));
        }
        Ok(KnnModel {
            train_x: train
                .samples()
                .iter()
                .map(|s| s.signals.data().to_vec())
                .collect(),
            train_y: train.labels(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, window: &Tensor) -> Result<u8> {
        let x = window.data();
        if x.len() != self.train_x[0].len() {
            return Err(Error::invalid_input(format!(
                "query has {} values, training windows have {}",
                x.len(),
                self.train_x[0].len()
            )));
        }
        let mut neighbors: Vec<(f64, u8)> = self
            .train_x
            .iter()
            .zip(&self.train_y)
            .map(|(t, &y)| (dist2(x, t), y))
            .collect();
        neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
        Ok(vote(&neighbors, self.k))
    }

    pub fn predict_batch(&self, data: &HarDataset) -> Result<Vec<u8>> {
        data.samples()
            .iter()
            .map(|s| self.predict(&s.signals))
            .collect()
    }
}

/// Picks k from `candidates` by stratum-free k-fold cross-validation on a
/// seeded subsample of `train` (at most `max_samples` windows). Distance
/// matrices are shared across candidates; ties prefer the smaller k.
pub fn select_k_by_cv(
    train: &HarDataset,
    candidates: &[usize],
    folds: usize,
    max_samples: usize,
    seed: u64,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid_input("no k candidates"));
    }
    if folds < 2 {
        return Err(Error::invalid_input("cross-validation needs >= 2 folds"));
    }
    if train.len() < folds {
        return Err(Error::invalid_input(format!(
            "{} samples cannot fill {} folds",
            train.len(),
            folds
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(max_samples.max(folds));

    let samples = train.samples();
    let n = idx.len();
    let max_k = *candidates.iter().max().expect("nonempty");
    let mut hits = vec![0usize; candidates.len()];
    let mut total = 0usize;

    for fold in 0..folds {
        let lo = fold * n / folds;
        let hi = (fold + 1) * n / folds;
        let valid = &idx[lo..hi];
        let rest: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        if rest.len() < max_k {
            return Err(Error::invalid_input(format!(
                "fold leaves {} training samples for k up to {max_k}",
                rest.len()
            )));
        }
        for &q in valid {
            let query = samples[q].signals.data();
            let mut neighbors: Vec<(f64, u8)> = rest
                .iter()
                .map(|&t| (dist2(query, samples[t].signals.data()), samples[t].label))
                .collect();
            neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
            for (ci, &k) in candidates.iter().enumerate() {
                if vote(&neighbors, k) == samples[q].label {
                    hits[ci] += 1;
                }
            }
            total += 1;
        }
    }

    let mut best = candidates[0];
    let mut best_hits = hits[0];
    for (ci, &k) in candidates.iter().enumerate().skip(1) {
        if hits[ci] > best_hits || (hits[ci] == best_hits && k < best) {
            best = k;
            best_hits = hits[ci];
        }
    }
    let _ = total;
    Ok(best)
}
