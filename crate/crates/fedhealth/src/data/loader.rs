//! Reader for the standard smartphone HAR directory layout:
//!
//! ```text
//! root/
//!   train/
//!     Inertial Signals/{body_acc,body_gyro,total_acc}_{x,y,z}_train.txt
//!     y_train.txt
//!     subject_train.txt
//!   test/  (same files with the _test suffix)
//! ```
//!
//! Signal files hold one window per row, 128 whitespace-separated floats.
//! Both splits are merged into a single dataset; partitioning back into
//! cloud and client populations is done by subject, not by the original
//! train/test line.

use super::{HarDataset, SampleWindow, CHANNEL_NAMES, NUM_CHANNELS, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path)
        .map_err(|e| Error::parse(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

fn read_signal_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = open(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line
            .map_err(|e| Error::parse(format!("read error in {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(WINDOW_LEN);
        for tok in line.split_ascii_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(format!(
                    "{} line {}: bad float {:?}",
                    path.display(),
                    lineno + 1,
                    tok
                ))
            })?;
            row.push(v);
        }
        if row.len() != WINDOW_LEN {
            return Err(Error::parse(format!(
                "{} line {}: expected {} values, got {}",
                path.display(),
                lineno + 1,
                WINDOW_LEN,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_int_file(path: &Path) -> Result<Vec<u8>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line
            .map_err(|e| Error::parse(format!("read error in {}: {e}", path.display())))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: u8 = t.parse().map_err(|_| {
            Error::parse(format!(
                "{} line {}: bad integer {:?}",
                path.display(),
                lineno + 1,
                t
            ))
        })?;
        out.push(v);
    }
    Ok(out)
}

fn load_split(root: &Path, split: &str) -> Result<Vec<SampleWindow>> {
    let split_dir = root.join(split);
    let signals_dir = split_dir.join("Inertial Signals");

    let signal_paths: Vec<PathBuf> = CHANNEL_NAMES
        .iter()
        .map(|ch| signals_dir.join(format!("{ch}_{split}.txt")))
        .collect();

    let mut channels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(NUM_CHANNELS);
    for p in &signal_paths {
        channels.push(read_signal_file(p)?);
    }
    let labels = read_int_file(&split_dir.join(format!("y_{split}.txt")))?;
    let subjects = read_int_file(&split_dir.join(format!("subject_{split}.txt")))?;

    let n = labels.len();
    for (p, ch) in signal_paths.iter().zip(&channels) {
        if ch.len() != n {
            return Err(Error::parse(format!(
                "integrity: {} has {} rows but y_{split}.txt has {}",
                p.display(),
                ch.len(),
                n
            )));
        }
    }
    if subjects.len() != n {
        return Err(Error::parse(format!(
            "integrity: subject_{split}.txt has {} rows but y_{split}.txt has {}",
            subjects.len(),
            n
        )));
    }

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut data = Vec::with_capacity(NUM_CHANNELS * WINDOW_LEN);
        for ch in &channels {
            data.extend_from_slice(&ch[i]);
        }
        let t = Tensor::new(vec![NUM_CHANNELS, WINDOW_LEN], data)?;
        samples.push(SampleWindow::new(t, labels[i], subjects[i]).map_err(|e| {
            Error::parse(format!("{split} row {}: {e}", i + 1))
        })?);
    }
    Ok(samples)
}

/// Loads both splits under `root` and merges them, train rows first.
/// Any missing or malformed file fails with an error naming it.
pub fn load_har(root: &Path) -> Result<HarDataset> {
    let mut samples = load_split(root, "train")?;
    samples.extend(load_split(root, "test")?);
    if samples.is_empty() {
        return Err(Error::parse(format!(
            "no windows found under {}",
            root.display()
        )));
    }
    Ok(HarDataset::new(samples))
}
