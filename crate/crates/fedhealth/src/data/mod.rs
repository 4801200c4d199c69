//! Windowed inertial sensor data: loading the standard on-disk layout,
//! subject partitioning, stratified splitting and z-score normalization.

mod loader;
pub mod synth;

pub use loader::load_har;

use crate::error::{Error, Result};
use crate::nn::LabeledSample;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;

/// Sensor channels per window, in the fixed order of [`CHANNEL_NAMES`].
pub const NUM_CHANNELS: usize = 9;
/// Timesteps per window (2.56 s at 50 Hz).
pub const WINDOW_LEN: usize = 128;
/// Activity classes, labeled 1..=6.
pub const NUM_CLASSES: usize = 6;
/// Subject ids run 1..=30.
pub const NUM_SUBJECTS: u8 = 30;

/// Activity names indexed by `label - 1`.
pub const ACTIVITY_NAMES: [&str; NUM_CLASSES] = [
    "WALKING",
    "WALKING_UPSTAIRS",
    "WALKING_DOWNSTAIRS",
    "SITTING",
    "STANDING",
    "LAYING",
];

/// Channel order inside every window tensor. Body acceleration first, then
/// gyroscope, then total acceleration, each as x/y/z.
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

/// One 2.56-second window: a [9, 128] tensor, its activity label (1..=6)
/// and the subject who produced it (1..=30).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub signals: Tensor,
    pub label: u8,
    pub subject_id: u8,
}

impl SampleWindow {
    pub fn new(signals: Tensor, label: u8, subject_id: u8) -> Result<SampleWindow> {
        if signals.shape() != [NUM_CHANNELS, WINDOW_LEN] {
            return Err(Error::invalid_input(format!(
                "window must be [{} x {}], got {:?}",
                NUM_CHANNELS,
                WINDOW_LEN,
                signals.shape()
            )));
        }
        if !signals.data().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_input("window contains non-finite values"));
        }
        if label < 1 || label > NUM_CLASSES as u8 {
            return Err(Error::invalid_input(format!(
                "label {} outside 1..={}",
                label, NUM_CLASSES
            )));
        }
        if subject_id < 1 || subject_id > NUM_SUBJECTS {
            return Err(Error::invalid_input(format!(
                "subject id {} outside 1..={}",
                subject_id, NUM_SUBJECTS
            )));
        }
        Ok(SampleWindow {
            signals,
            label,
            subject_id,
        })
    }
}

/// Per-channel z-scoring statistics. `degenerate` marks channels whose
/// standard deviation collapsed to zero; they are scaled by 1 instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
    pub degenerate: [bool; NUM_CHANNELS],
}

/// An immutable collection of windows. When the dataset (or an ancestor)
/// has been normalized, the statistics used are carried along so derived
/// splits stay traceable to them.
#[derive(Debug, Clone)]
pub struct HarDataset {
    samples: Vec<SampleWindow>,
    stats: Option<ChannelStats>,
}

impl HarDataset {
    pub fn new(samples: Vec<SampleWindow>) -> HarDataset {
        HarDataset {
            samples,
            stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SampleWindow] {
        &self.samples
    }

    /// Statistics this dataset was normalized with, if any.
    pub fn stats(&self) -> Option<&ChannelStats> {
        self.stats.as_ref()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn label_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0usize; NUM_CLASSES];
        for s in &self.samples {
            hist[(s.label - 1) as usize] += 1;
        }
        hist
    }

    pub fn subjects(&self) -> BTreeSet<u8> {
        self.samples.iter().map(|s| s.subject_id).collect()
    }

    /// Borrowed views for the training loop, with labels shifted to
    /// 0-based class indices.
    pub fn labeled_samples(&self) -> Vec<LabeledSample<'_>> {
        self.samples
            .iter()
            .map(|s| LabeledSample {
                input: &s.signals,
                class: (s.label - 1) as usize,
            })
            .collect()
    }

    /// Splits into (samples with subject in `ids`, the rest). The
    /// complement may come back empty; that is legal and up to the caller
    /// to handle.
    pub fn partition_by_subject(&self, ids: &BTreeSet<u8>) -> Result<(HarDataset, HarDataset)> {
        if ids.is_empty() {
            return Err(Error::invalid_input(
                "subject partition needs at least one id",
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id < 1 || id > NUM_SUBJECTS) {
            return Err(Error::invalid_input(format!(
                "subject id {} outside 1..={}",
                bad, NUM_SUBJECTS
            )));
        }
        let mut selected = Vec::new();
        let mut rest = Vec::new();
        for s in &self.samples {
            if ids.contains(&s.subject_id) {
                selected.push(s.clone());
            } else {
                rest.push(s.clone());
            }
        }
        Ok((
            HarDataset {
                samples: selected,
                stats: self.stats.clone(),
            },
            HarDataset {
                samples: rest,
                stats: self.stats.clone(),
            },
        ))
    }

    /// Class-stratified split: per class, `ratio` of the samples (rounded,
    /// but always leaving at least one on each side) go to the first
    /// dataset. Deterministic for a given seed; sample order within each
    /// side follows the original dataset order.
    pub fn train_eval_split(&self, ratio: f64, seed: u64) -> Result<(HarDataset, HarDataset)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::config(format!(
                "split ratio must be in (0, 1), got {ratio}"
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[(s.label - 1) as usize].push(i);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut take = vec![false; self.samples.len()];
        for (c, indices) in by_class.iter_mut().enumerate() {
            if indices.is_empty() {
                continue;
            }
            if indices.len() < 2 {
                return Err(Error::invalid_input(format!(
                    "class {} has {} sample(s); stratified split needs at least 2",
                    c + 1,
                    indices.len()
                )));
            }
            indices.shuffle(&mut rng);
            let want = ((indices.len() as f64) * ratio).round() as usize;
            let want = want.clamp(1, indices.len() - 1);
            for &i in indices.iter().take(want) {
                take[i] = true;
            }
        }
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if take[i] {
                first.push(s.clone());
            } else {
                second.push(s.clone());
            }
        }
        Ok((
            HarDataset {
                samples: first,
                stats: self.stats.clone(),
            },
            HarDataset {
                samples: second,
                stats: self.stats.clone(),
            },
        ))
    }

    /// Per-channel mean and (population) standard deviation over every
    /// timestep of every window.
    pub fn compute_stats(&self) -> Result<ChannelStats> {
        if self.is_empty() {
            return Err(Error::invalid_input(
                "cannot compute statistics of an empty dataset",
            ));
        }
        let n = (self.samples.len() * WINDOW_LEN) as f64;
        let mut mean = [0.0; NUM_CHANNELS];
        let mut sq = [0.0; NUM_CHANNELS];
        for s in &self.samples {
            for ch in 0..NUM_CHANNELS {
                for &v in s.signals.row(ch) {
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let mut std = [0.0; NUM_CHANNELS];
        let mut degenerate = [false; NUM_CHANNELS];
        for ch in 0..NUM_CHANNELS {
            mean[ch] /= n;
            let var = (sq[ch] / n - mean[ch] * mean[ch]).max(0.0);
            std[ch] = var.sqrt();
            if std[ch] < 1e-12 {
                std[ch] = 1.0;
                degenerate[ch] = true;
            }
        }
        Ok(ChannelStats {
            mean,
            std,
            degenerate,
        })
    }

    /// Returns a z-scored copy. With `stats = None` the statistics come
    /// from this dataset; passing `Some` applies foreign statistics (the
    /// cloud's, typically) unchanged. A dataset that already carries stats
    /// cannot be normalized again.
    pub fn normalize(&self, stats: Option<&ChannelStats>) -> Result<HarDataset> {
        if self.stats.is_some() {
            return Err(Error::config(
                "dataset is already normalized; statistics are immutable",
            ));
        }
        let stats = match stats {
            Some(s) => s.clone(),
            None => self.compute_stats()?,
        };
        let mut samples = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let mut out = s.signals.clone();
            for ch in 0..NUM_CHANNELS {
                let (m, sd) = (stats.mean[ch], stats.std[ch]);
                for v in out.row_mut(ch) {
                    *v = (*v - m) / sd;
                }
            }
            samples.push(SampleWindow {
                signals: out,
                label: s.label,
                subject_id: s.subject_id,
            });
        }
        Ok(HarDataset {
            samples,
            stats: Some(stats),
        })
    }
}
