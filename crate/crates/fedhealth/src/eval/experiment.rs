//! The experiment driver: repeats the whole protocol across several
//! seeds, evaluates three methods on every client (the federated and
//! personalized model, the cloud-only model, and a nearest-neighbor
//! baseline), and writes the result files the CLI hands to the user.

use crate::crypto::CodecSpec;
use crate::data::{HarDataset, ACTIVITY_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::knn::{select_k_by_cv, KnnModel};
use crate::eval::metrics::{accuracy, confusion_and_prf, ConfusionMatrix};
use crate::federation::{
    derive_seed, run_protocol, AuditLog, ClientState, FederationConfig, KeyAuthority, ServerState,
};
use crate::nn::{activity_cnn, CnnWidths, Network};
use crate::transfer::TransferConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn default_client_subjects() -> Vec<u8> {
    vec![26, 27, 28, 29, 30]
}

fn default_repeats() -> usize {
    5
}

fn default_seed() -> u64 {
    42
}

fn default_train_ratio() -> f64 {
    0.8
}

fn default_key_bits() -> u32 {
    1024
}

fn default_knn_candidates() -> Vec<usize> {
    vec![1, 3, 5, 7, 9]
}

fn default_knn_cv_folds() -> usize {
    5
}

fn default_knn_train_size() -> usize {
    2000
}

/// Everything one experiment needs, loadable from a JSON file. The
/// nested federation seed is ignored; each repetition derives its own
/// from the top-level `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_client_subjects")]
    pub client_subjects: Vec<u8>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Fraction of each partition that becomes training data.
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
    #[serde(default)]
    pub widths: CnnWidths,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default = "default_key_bits")]
    pub key_bits: u32,
    #[serde(default)]
    pub codec: CodecSpec,
    #[serde(default = "default_knn_candidates")]
    pub knn_k_candidates: Vec<usize>,
    #[serde(default = "default_knn_cv_folds")]
    pub knn_cv_folds: usize,
    /// The baseline trains on a seeded subsample of the cloud training
    /// split capped at this size; k is cross-validated on the same set.
    #[serde(default = "default_knn_train_size")]
    pub knn_train_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults fill every field")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.client_subjects.is_empty() {
            return Err(Error::config("no client subjects"));
        }
        let distinct: BTreeSet<u8> = self.client_subjects.iter().copied().collect();
        if distinct.len() != self.client_subjects.len() {
            return Err(Error::config("client subjects must be distinct"));
        }
        if self.client_subjects.iter().any(|&s| s == 0 || s > 30) {
            return Err(Error::config("client subjects must lie in 1..=30"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be positive"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::config(format!(
                "train ratio {} outside (0, 1)",
                self.train_ratio
            )));
        }
        self.federation.validate(self.client_subjects.len())?;
        self.transfer.validate()?;
        self.codec.validate()?;
        if self.knn_k_candidates.is_empty() {
            return Err(Error::config("no k candidates for the baseline"));
        }
        if self.knn_cv_folds < 2 {
            return Err(Error::config("baseline cross-validation needs >= 2 folds"));
        }
        if self.knn_train_size < self.knn_cv_folds {
            return Err(Error::config(
                "baseline training size smaller than the fold count",
            ));
        }
        Ok(())
    }
}

/// One client's scores within one repetition.
pub struct ClientResult {
    pub subject: u8,
    pub fed_accuracy: f64,
    pub nofed_accuracy: f64,
    pub knn_accuracy: f64,
    pub fed_macro_f1: f64,
    pub nofed_macro_f1: f64,
    pub knn_macro_f1: f64,
    pub fed_confusion: ConfusionMatrix,
    pub nofed_confusion: ConfusionMatrix,
}

pub struct RepetitionResult {
    pub repetition: u32,
    /// Cloud model accuracy on the held-out cloud split.
    pub cloud_accuracy: f64,
    /// Neighbor count the baseline settled on.
    pub knn_k: usize,
    pub clients: Vec<ClientResult>,
}

impl RepetitionResult {
    pub fn fed_avg(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.fed_accuracy))
    }

    pub fn nofed_avg(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.nofed_accuracy))
    }

    pub fn knn_avg(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.knn_accuracy))
    }

    pub fn fed_macro_f1_avg(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.fed_macro_f1))
    }

    pub fn nofed_macro_f1_avg(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.nofed_macro_f1))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub struct ExperimentReport {
    pub repetitions: Vec<RepetitionResult>,
    pub audit: AuditLog,
}

impl ExperimentReport {
    pub fn subjects(&self) -> Vec<u8> {
        self.repetitions
            .first()
            .map(|r| r.clients.iter().map(|c| c.subject).collect())
            .unwrap_or_default()
    }

    pub fn fed_mean(&self) -> f64 {
        mean(self.repetitions.iter().map(|r| r.fed_avg()))
    }

    pub fn nofed_mean(&self) -> f64 {
        mean(self.repetitions.iter().map(|r| r.nofed_avg()))
    }

    pub fn knn_mean(&self) -> f64 {
        mean(self.repetitions.iter().map(|r| r.knn_avg()))
    }

    /// Mean accuracy for one subject across repetitions; the accessor
    /// picks the method.
    pub fn subject_mean(&self, subject: u8, get: impl Fn(&ClientResult) -> f64) -> f64 {
        mean(
            self.repetitions
                .iter()
                .flat_map(|r| r.clients.iter())
                .filter(|c| c.subject == subject)
                .map(get),
        )
    }

    /// Index of the repetition with the best federated average; ties go
    /// to the earliest.
    pub fn best_repetition(&self) -> usize {
        let mut best = 0;
        for (i, rep) in self.repetitions.iter().enumerate() {
            if rep.fed_avg() > self.repetitions[best].fed_avg() {
                best = i;
            }
        }
        best
    }

    /// The flat results table: one row per (subject, method, repetition)
    /// plus per-subject and overall mean rows. Byte-for-byte identical
    /// across runs with the same config and data.
    pub fn to_report_csv(&self) -> String {
        let mut out = String::from("subject,method,repetition,accuracy,macro_f1\n");
        for rep in &self.repetitions {
            for c in &rep.clients {
                for (method, acc, f1) in [
                    ("fed", c.fed_accuracy, c.fed_macro_f1),
                    ("nofed", c.nofed_accuracy, c.nofed_macro_f1),
                    ("knn", c.knn_accuracy, c.knn_macro_f1),
                ] {
                    let _ = writeln!(
                        out,
                        "{},{},{},{:.6},{:.6}",
                        c.subject, method, rep.repetition, acc, f1
                    );
                }
            }
        }
        for &subject in &self.subjects() {
            for (method, acc, f1) in [
                (
                    "fed",
                    self.subject_mean(subject, |c| c.fed_accuracy),
                    self.subject_mean(subject, |c| c.fed_macro_f1),
                ),
                (
                    "nofed",
                    self.subject_mean(subject, |c| c.nofed_accuracy),
                    self.subject_mean(subject, |c| c.nofed_macro_f1),
                ),
                (
                    "knn",
                    self.subject_mean(subject, |c| c.knn_accuracy),
                    self.subject_mean(subject, |c| c.knn_macro_f1),
                ),
            ] {
                let _ = writeln!(out, "{subject},{method},mean,{acc:.6},{f1:.6}");
            }
        }
        let overall = [
            (
                "fed",
                self.fed_mean(),
                mean(self.repetitions.iter().map(|r| r.fed_macro_f1_avg())),
            ),
            (
                "nofed",
                self.nofed_mean(),
                mean(self.repetitions.iter().map(|r| r.nofed_macro_f1_avg())),
            ),
            (
                "knn",
                self.knn_mean(),
                mean(
                    self.repetitions
                        .iter()
                        .map(|r| mean(r.clients.iter().map(|c| c.knn_macro_f1))),
                ),
            ),
        ];
        for (method, acc, f1) in overall {
            let _ = writeln!(out, "all,{method},mean,{acc:.6},{f1:.6}");
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "repetitions: {}", self.repetitions.len());
        let _ = writeln!(out, "clients: {:?}", self.subjects());
        for rep in &self.repetitions {
            let _ = writeln!(
                out,
                "rep {}: cloud {:.4}  fed {:.4}  nofed {:.4}  knn {:.4} (k={})",
                rep.repetition,
                rep.cloud_accuracy,
                rep.fed_avg(),
                rep.nofed_avg(),
                rep.knn_avg(),
                rep.knn_k,
            );
        }
        let _ = writeln!(
            out,
            "means: fed {:.4}  nofed {:.4}  knn {:.4}  improvement {:+.4}",
            self.fed_mean(),
            self.nofed_mean(),
            self.knn_mean(),
            self.fed_mean() - self.nofed_mean(),
        );
        let best = self.best_repetition();
        let _ = writeln!(
            out,
            "best repetition: {} (fed {:.4}, macro F1 fed {:.4} vs nofed {:.4})",
            self.repetitions[best].repetition,
            self.repetitions[best].fed_avg(),
            self.repetitions[best].fed_macro_f1_avg(),
            self.repetitions[best].nofed_macro_f1_avg(),
        );
        for &subject in &self.subjects() {
            let _ = writeln!(
                out,
                "subject {subject}: fed {:.4}  nofed {:.4}  knn {:.4}",
                self.subject_mean(subject, |c| c.fed_accuracy),
                self.subject_mean(subject, |c| c.nofed_accuracy),
                self.subject_mean(subject, |c| c.knn_accuracy),
            );
        }
        out
    }
}

fn predict_labels(net: &Network, data: &HarDataset) -> Result<Vec<u8>> {
    data.samples()
        .iter()
        .map(|s| net.predict(&s.signals).map(|c| (c + 1) as u8))
        .collect()
}

/// Seeded subsample without replacement; order of the survivors follows
/// the original dataset so downstream work is reproducible.
fn subsample(data: &HarDataset, max: usize, seed: u64) -> HarDataset {
    if data.len() <= max {
        return data.clone();
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    idx.truncate(max);
    idx.sort_unstable();
    HarDataset::new(idx.iter().map(|&i| data.samples()[i].clone()).collect())
}

/// Runs `config.repeats` independent repetitions of: split, normalize,
/// federate, personalize, and score every method on every client.
pub fn run_experiment(data: &HarDataset, config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let subjects: BTreeSet<u8> = config.client_subjects.iter().copied().collect();
    let present = data.subjects();
    for &s in &subjects {
        if !present.contains(&s) {
            return Err(Error::invalid_input(format!(
                "client subject {s} is absent from the dataset"
            )));
        }
    }
    let (client_pool, cloud_pool) = data.partition_by_subject(&subjects)?;
    if cloud_pool.is_empty() {
        return Err(Error::invalid_input(
            "every subject is a client; nothing remains for cloud training",
        ));
    }
    let arch = activity_cnn(
        crate::data::NUM_CHANNELS,
        crate::data::WINDOW_LEN,
        NUM_CLASSES,
        &config.widths,
    )?;

    let mut repetitions = Vec::with_capacity(config.repeats);
    let mut audit = AuditLog::new();

    for rep in 0..config.repeats as u32 {
        // Cloud split and normalization; clients reuse the cloud
        // statistics so all models see one input distribution.
        let (cloud_train, cloud_eval) =
            cloud_pool.train_eval_split(config.train_ratio, derive_seed(config.seed, rep as u64))?;
        let stats = cloud_train.compute_stats()?;
        let cloud_train = cloud_train.normalize(Some(&stats))?;
        let cloud_eval = cloud_eval.normalize(Some(&stats))?;

        let mut server = ServerState::new(cloud_train, cloud_eval)?;
        let mut clients = Vec::with_capacity(config.client_subjects.len());
        for &subject in &config.client_subjects {
            let only: BTreeSet<u8> = [subject].into();
            let (own, _) = client_pool.partition_by_subject(&only)?;
            let (tr, ev) = own.train_eval_split(
                config.train_ratio,
                derive_seed(config.seed, 0x0100 + rep as u64 * 64 + subject as u64),
            )?;
            clients.push(ClientState::new(
                subject,
                tr.normalize(Some(&stats))?,
                ev.normalize(Some(&stats))?,
            )?);
        }

        // Baseline: nearest neighbors on raw normalized windows drawn
        // from the cloud training split.
        let knn_train = subsample(
            server.train_data(),
            config.knn_train_size,
            derive_seed(config.seed, 0x0200 + rep as u64),
        );
        let knn_k = select_k_by_cv(
            &knn_train,
            &config.knn_k_candidates,
            config.knn_cv_folds,
            knn_train.len(),
            derive_seed(config.seed, 0x0300 + rep as u64),
        )?;
        let knn = KnnModel::fit(&knn_train, knn_k)?;

        let mut fed_cfg = config.federation.clone();
        fed_cfg.seed = derive_seed(config.seed, 0x0400 + rep as u64);
        let mut transfer_cfg = config.transfer.clone();
        transfer_cfg.seed = derive_seed(config.seed, 0x0500 + rep as u64);
        let authority = KeyAuthority::new(
            config.key_bits,
            derive_seed(config.seed, 0x0600 + rep as u64),
        )?;

        let outcome = run_protocol(
            &mut server,
            &mut clients,
            &authority,
            &arch,
            config.codec,
            &fed_cfg,
            &transfer_cfg,
            rep,
        )?;
        audit.extend(outcome.audit);

        let mut client_results = Vec::with_capacity(clients.len());
        for client in &clients {
            let eval_data = client.eval_data();
            let truths = eval_data.labels();

            let fed_model = client.personalized().ok_or_else(|| {
                Error::protocol(format!(
                    "client {} finished without a personalized model",
                    client.subject()
                ))
            })?;
            let fed_preds = predict_labels(fed_model, eval_data)?;
            let nofed_preds = predict_labels(&outcome.cloud_model, eval_data)?;
            let knn_preds = knn.predict_batch(eval_data)?;

            let (fed_confusion, fed_prf) = confusion_and_prf(&fed_preds, &truths, NUM_CLASSES)?;
            let (nofed_confusion, nofed_prf) =
                confusion_and_prf(&nofed_preds, &truths, NUM_CLASSES)?;
            let (_, knn_prf) = confusion_and_prf(&knn_preds, &truths, NUM_CLASSES)?;

            client_results.push(ClientResult {
                subject: client.subject(),
                fed_accuracy: accuracy(&fed_preds, &truths)?,
                nofed_accuracy: accuracy(&nofed_preds, &truths)?,
                knn_accuracy: accuracy(&knn_preds, &truths)?,
                fed_macro_f1: fed_prf.macro_f1,
                nofed_macro_f1: nofed_prf.macro_f1,
                knn_macro_f1: knn_prf.macro_f1,
                fed_confusion,
                nofed_confusion,
            });
        }

        repetitions.push(RepetitionResult {
            repetition: rep,
            cloud_accuracy: outcome.cloud_accuracy,
            knn_k,
            clients: client_results,
        });
    }

    Ok(ExperimentReport { repetitions, audit })
}

/// Writes report.csv, summary.txt, audit.log and the best repetition's
/// confusion matrices into `out_dir` (created if missing).
pub fn write_artifacts(
    report: &ExperimentReport,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.csv"), report.to_report_csv())?;
    fs::write(out_dir.join("summary.txt"), report.summary_text())?;
    fs::write(out_dir.join("audit.log"), report.audit.to_jsonl()?)?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::config(format!("serializing run config: {e}")))?;
    fs::write(out_dir.join("config.json"), config_json)?;

    let best = &report.repetitions[report.best_repetition()];
    for c in &best.clients {
        fs::write(
            out_dir.join(format!("confusion_{}_fed.csv", c.subject)),
            c.fed_confusion.to_csv(&ACTIVITY_NAMES)?,
        )?;
        fs::write(
            out_dir.join(format!("confusion_{}_nofed.csv", c.subject)),
            c.nofed_confusion.to_csv(&ACTIVITY_NAMES)?,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{ensure_corpus, SynthSpec};
    use crate::data::load_har;
    use crate::transfer::Variant;

    fn quick_config() -> RunConfig {
        RunConfig {
            client_subjects: vec![26, 27],
            repeats: 2,
            seed: 11,
            train_ratio: 0.8,
            widths: CnnWidths {
                conv1_filters: 3,
                conv2_filters: 4,
                hidden_units: 12,
                embedding_dim: 8,
            },
            federation: FederationConfig {
                rounds: 1,
                cloud_epochs: 1,
                client_epochs: 1,
                batch_size: 32,
                learning_rate: 0.02,
                server_finetune_epochs: 0,
                seed: 0,
                weights: None,
            },
            transfer: TransferConfig {
                eta: 0.01,
                variant: Variant::Coral,
                epochs: 1,
                batch_size: 32,
                learning_rate: 0.02,
                seed: 0,
            },
            key_bits: 256,
            codec: CodecSpec::default(),
            knn_k_candidates: vec![1, 3],
            knn_cv_folds: 2,
            knn_train_size: 200,
        }
    }

    fn small_corpus() -> HarDataset {
        let dir = std::env::temp_dir().join("fedhealth-experiment-corpus");
        let spec = SynthSpec {
            seed: 5,
            total_windows: 1800,
        };
        ensure_corpus(&dir, &spec).unwrap();
        load_har(&dir).unwrap()
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.client_subjects, vec![26, 27, 28, 29, 30]);
        assert_eq!(cfg.repeats, 5);
        assert_eq!(cfg.key_bits, 1024);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);

        // Partial JSON fills the rest from defaults.
        let partial = RunConfig::from_json(r#"{"repeats": 2, "seed": 7}"#).unwrap();
        assert_eq!(partial.repeats, 2);
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.client_subjects, vec![26, 27, 28, 29, 30]);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = quick_config();
        cfg.client_subjects = vec![26, 26];
        assert!(cfg.validate().is_err());
        let mut cfg = quick_config();
        cfg.client_subjects = vec![0];
        assert!(cfg.validate().is_err());
        let mut cfg = quick_config();
        cfg.train_ratio = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_config();
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_config();
        cfg.knn_k_candidates.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn experiment_produces_full_report_and_deterministic_csv() {
        let data = small_corpus();
        let cfg = quick_config();

        let report = run_experiment(&data, &cfg).unwrap();
        assert_eq!(report.repetitions.len(), 2);
        assert_eq!(report.subjects(), vec![26, 27]);
        for rep in &report.repetitions {
            assert_eq!(rep.clients.len(), 2);
            for c in &rep.clients {
                assert!((0.0..=1.0).contains(&c.fed_accuracy));
                assert!((0.0..=1.0).contains(&c.nofed_accuracy));
                assert!((0.0..=1.0).contains(&c.knn_accuracy));
            }
        }
        assert!(report.audit.server_plaintext_violations().is_empty());

        // Same config, same data: the table is byte-identical.
        let again = run_experiment(&data, &cfg).unwrap();
        assert_eq!(report.to_report_csv(), again.to_report_csv());

        // CSV shape: 2 reps * 2 clients * 3 methods + 2 subjects * 3
        // mean rows + 3 overall rows + header.
        let csv = report.to_report_csv();
        assert_eq!(csv.lines().count(), 1 + 12 + 6 + 3);
        assert!(csv.starts_with("subject,method,repetition,accuracy,macro_f1"));
    }

    #[test]
    fn artifacts_are_written() {
        let data = small_corpus();
        let mut cfg = quick_config();
        cfg.repeats = 1;
        let report = run_experiment(&data, &cfg).unwrap();
        let out = std::env::temp_dir().join("fedhealth-experiment-artifacts");
        let _ = fs::remove_dir_all(&out);
        write_artifacts(&report, &cfg, &out).unwrap();
        for name in ["report.csv", "summary.txt", "audit.log", "config.json"] {
            assert!(out.join(name).is_file(), "{name} missing");
        }
        assert!(out.join("confusion_26_fed.csv").is_file());
        assert!(out.join("confusion_27_nofed.csv").is_file());
        let audit = fs::read_to_string(out.join("audit.log")).unwrap();
        assert!(audit.lines().count() > 5);
    }

    #[test]
    fn absent_subject_is_rejected() {
        let data = small_corpus();
        let mut cfg = quick_config();
        cfg.client_subjects = vec![26, 27, 31];
        // 31 fails range validation before dataset lookup.
        assert!(cfg.validate().is_err());
        // A valid id missing from the data fails at lookup.
        let all = data.subjects();
        let absent = (1..=30).find(|s| !all.contains(s));
        if let Some(s) = absent {
            cfg.client_subjects = vec![s];
            assert!(run_experiment(&data, &cfg).is_err());
        }
    }
}
