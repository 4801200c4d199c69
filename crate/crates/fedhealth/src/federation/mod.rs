//! The simulated federation: one server with its own training data, N
//! clients holding per-subject data, and a key authority that owns the
//! decryption key. Every model exchange crosses the wire as serialized
//! encrypted parameters; the server only ever sees ciphertexts from
//! clients and decrypts nothing but the aggregate (via the authority).
//!
//! One training pass: the server trains its model, distributes it
//! encrypted, clients decrypt and train locally, upload encrypted
//! weight-scaled parameters, and the server merges them by homomorphic
//! summation followed by a single aggregate decryption. After the last
//! round each client personalizes the final model on its own data.

mod audit;

pub use audit::{AuditLog, AuditRecord, PayloadKind};

use crate::crypto::{
    decrypt_params, encrypt_params, keygen, CodecSpec, EncryptedParams, KeyPair, PublicKey,
};
use crate::data::HarDataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, train, Architecture, ModelParams, Network, TrainOptions};
use crate::transfer::{personalize, TransferConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Splitmix-style hash so each independent actor gets its own stream
/// from one master seed.
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hyperparameters of a protocol run. `weights` overrides the default
/// aggregation weights (proportional to client training-set sizes); when
/// given they must be nonnegative and sum to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub cloud_epochs: usize,
    pub client_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Optional server-side fine-tuning on cloud data after each
    /// aggregation (0 disables it).
    pub server_finetune_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 3,
            cloud_epochs: 80,
            client_epochs: 5,
            batch_size: 64,
            learning_rate: 0.01,
            server_finetune_epochs: 0,
            seed: 99,
            weights: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if num_clients == 0 {
            return Err(Error::config("need at least one client"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != num_clients {
                return Err(Error::config(format!(
                    "{} aggregation weights for {} clients",
                    w.len(),
                    num_clients
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::config(
                    "aggregation weights must be nonnegative and finite",
                ));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "aggregation weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Holds the decryption key. The server gets only the public half; the
/// authority decrypts models addressed to clients and the final
/// aggregate, nothing else is accessible in the protocol's API.
pub struct KeyAuthority {
    keypair: KeyPair,
}

impl KeyAuthority {
    pub fn new(bits: u32, seed: u64) -> Result<KeyAuthority> {
        Ok(KeyAuthority {
            keypair: keygen(bits, seed)?,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.keypair.public()
    }

    /// Decrypts a model addressed to a client during distribution.
    pub fn decrypt_for_client(
        &self,
        ep: &EncryptedParams,
        arch: &Architecture,
    ) -> Result<ModelParams> {
        decrypt_params(ep, &self.keypair, arch, false)
    }

    /// Decrypts the homomorphic sum of weight-scaled uploads. The inputs
    /// were pre-scaled, so the sum already is the weighted mean.
    pub fn decrypt_aggregate(
        &self,
        ep: &EncryptedParams,
        arch: &Architecture,
    ) -> Result<ModelParams> {
        decrypt_params(ep, &self.keypair, arch, false)
    }
}

/// The server side: cloud data plus the current model. Holds no client
/// data and offers no path to any; its only inbound parameter type from
/// clients is serialized ciphertext.
pub struct ServerState {
    train: HarDataset,
    eval: HarDataset,
    model: Option<Network>,
    fingerprints: Vec<String>,
}

impl ServerState {
    pub fn new(train: HarDataset, eval: HarDataset) -> Result<ServerState> {
        if train.is_empty() {
            return Err(Error::invalid_input("cloud training split is empty"));
        }
        if eval.is_empty() {
            return Err(Error::invalid_input("cloud evaluation split is empty"));
        }
        Ok(ServerState {
            train,
            eval,
            model: None,
            fingerprints: Vec::new(),
        })
    }

    pub fn model(&self) -> Option<&Network> {
        self.model.as_ref()
    }

    pub fn train_data(&self) -> &HarDataset {
        &self.train
    }

    /// Fingerprint of every model the server has held, in order.
    pub fn fingerprints(&self) -> &[String] {
        &self.fingerprints
    }

    /// Trains the cloud model from scratch and records its accuracy on
    /// the held-out cloud split.
    pub fn train_cloud(
        &mut self,
        arch: &Architecture,
        opts: &TrainOptions,
    ) -> Result<f64> {
        let mut net = Network::new_seeded(arch.clone(), derive_seed(opts.seed, 0xC10D))?;
        let samples = self.train.labeled_samples();
        train(&mut net, &samples, opts, None)?;
        let (acc, _) = evaluate(&net, &self.eval.labeled_samples())?;
        self.fingerprints.push(net.arch().fingerprint().hex());
        self.model = Some(net);
        Ok(acc)
    }

    /// Encrypts the current model for one recipient and serializes it.
    /// Fresh encryption randomness per call keeps ciphertexts unlinkable.
    pub fn encrypt_model(
        &self,
        pk: &PublicKey,
        codec: CodecSpec,
        rng_seed: u64,
    ) -> Result<Vec<u8>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::protocol("no cloud model to distribute".to_string()))?;
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let ep = encrypt_params(model.params(), pk, codec, &mut rng)?;
        Ok(ep.to_bytes())
    }

    /// Homomorphically sums the serialized client uploads and installs
    /// the aggregate (decrypted by the authority) as the new cloud model.
    /// Individual uploads are never decrypted.
    pub fn aggregate(
        &mut self,
        uploads: &[Vec<u8>],
        pk: &PublicKey,
        authority: &KeyAuthority,
        arch: &Architecture,
    ) -> Result<()> {
        if uploads.is_empty() {
            return Err(Error::protocol("no uploads to aggregate".to_string()));
        }
        let mut parsed = Vec::with_capacity(uploads.len());
        for wire in uploads {
            parsed.push(EncryptedParams::from_bytes(wire)?);
        }
        let mut sum = parsed[0].clone();
        for ep in &parsed[1..] {
            sum = sum.add(ep, pk)?;
        }
        let params = authority.decrypt_aggregate(&sum, arch)?;
        let net = Network::from_parts(arch.clone(), params)?;
        self.fingerprints.push(net.arch().fingerprint().hex());
        self.model = Some(net);
        Ok(())
    }

    /// Optional post-aggregation pass over the cloud data.
    pub fn finetune(&mut self, opts: &TrainOptions) -> Result<()> {
        let model = self
            .model
            .as_mut()
            .ok_or_else(|| Error::protocol("no cloud model to finetune".to_string()))?;
        let samples = self.train.labeled_samples();
        train(model, &samples, opts, None)?;
        Ok(())
    }
}

/// One simulated wearer: private train/eval splits and the models
/// living on the device.
pub struct ClientState {
    subject: u8,
    train: HarDataset,
    eval: HarDataset,
    received: Option<Network>,
    local: Option<Network>,
    personalized: Option<Network>,
}

impl ClientState {
    pub fn new(subject: u8, train: HarDataset, eval: HarDataset) -> Result<ClientState> {
        if train.is_empty() {
            return Err(Error::invalid_input(format!(
                "client {subject} has an empty training split"
            )));
        }
        if eval.is_empty() {
            return Err(Error::invalid_input(format!(
                "client {subject} has an empty evaluation split"
            )));
        }
        Ok(ClientState {
            subject,
            train,
            eval,
            received: None,
            local: None,
            personalized: None,
        })
    }

    pub fn subject(&self) -> u8 {
        self.subject
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn eval_data(&self) -> &HarDataset {
        &self.eval
    }

    pub fn received(&self) -> Option<&Network> {
        self.received.as_ref()
    }

    pub fn local(&self) -> Option<&Network> {
        self.local.as_ref()
    }

    pub fn personalized(&self) -> Option<&Network> {
        self.personalized.as_ref()
    }

    /// Parses and decrypts a distributed model off the wire.
    pub fn receive(
        &mut self,
        wire: &[u8],
        authority: &KeyAuthority,
        arch: &Architecture,
    ) -> Result<()> {
        let ep = EncryptedParams::from_bytes(wire)?;
        let params = authority.decrypt_for_client(&ep, arch)?;
        self.received = Some(Network::from_parts(arch.clone(), params)?);
        Ok(())
    }

    /// Local training pass starting from the received model.
    pub fn train_local(&mut self, opts: &TrainOptions) -> Result<()> {
        let start = self
            .received
            .as_ref()
            .ok_or_else(|| Error::protocol("client has no received model".to_string()))?;
        let mut net = start.clone();
        let samples = self.train.labeled_samples();
        train(&mut net, &samples, opts, None)?;
        self.local = Some(net);
        Ok(())
    }

    /// Scales the local parameters by this client's aggregation weight,
    /// encrypts, and serializes for upload.
    pub fn upload(
        &self,
        weight: f64,
        pk: &PublicKey,
        codec: CodecSpec,
        rng_seed: u64,
    ) -> Result<Vec<u8>> {
        let model = self
            .local
            .as_ref()
            .ok_or_else(|| Error::protocol("client has no locally trained model".to_string()))?;
        let scaled = model.params().scaled(weight);
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let ep = encrypt_params(&scaled, pk, codec, &mut rng)?;
        Ok(ep.to_bytes())
    }

    /// Personalizes the most recently received model on local data.
    pub fn personalize_received(&mut self, cfg: &TransferConfig) -> Result<()> {
        let base = self
            .received
            .as_ref()
            .ok_or_else(|| Error::protocol("client has no received model".to_string()))?;
        let samples = self.train.labeled_samples();
        let mut cfg = cfg.clone();
        cfg.seed = derive_seed(cfg.seed, self.subject as u64);
        let (net, _trace) = personalize(base, &samples, &cfg)?;
        self.personalized = Some(net);
        Ok(())
    }

    /// Accuracy of `net` on this client's private evaluation split.
    pub fn eval_accuracy(&self, net: &Network) -> Result<f64> {
        let (acc, _) = evaluate(net, &self.eval.labeled_samples())?;
        Ok(acc)
    }
}

/// Everything a finished protocol run hands back to the caller.
pub struct ProtocolOutcome {
    pub cloud_accuracy: f64,
    /// The model as it stood after cloud training, before any federated
    /// round touched it. This is the no-federation baseline.
    pub cloud_model: Network,
    /// Aggregation weights actually used, aligned with the client slice.
    pub weights: Vec<f64>,
    pub audit: AuditLog,
}

fn push_record(
    log: &mut AuditLog,
    repetition: u32,
    round: u32,
    actor: String,
    event: &str,
    payload: PayloadKind,
    fingerprint: String,
    bytes: u64,
) {
    log.push(AuditRecord {
        repetition,
        round,
        actor,
        event: event.to_string(),
        payload,
        fingerprint,
        bytes,
    });
}

/// Runs the full protocol in place: trains the cloud model, executes
/// `config.rounds` encrypted train/aggregate rounds, then personalizes
/// on every client (skipped entirely when `rounds` is 0). Returns the
/// audit trail of every parameter movement.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    server: &mut ServerState,
    clients: &mut [ClientState],
    authority: &KeyAuthority,
    arch: &Architecture,
    codec: CodecSpec,
    config: &FederationConfig,
    transfer_cfg: &TransferConfig,
    repetition: u32,
) -> Result<ProtocolOutcome> {
    config.validate(clients.len())?;
    let mut audit = AuditLog::new();
    let pk = authority.public_key();
    let fp = arch.fingerprint().hex();
    let plain_bytes = 8 * {
        // Parameter payload size in plaintext: every f64 of the model.
        let probe = Network::new_seeded(arch.clone(), 0)?;
        probe.params().param_count() as u64
    };

    // Step 1: cloud training.
    let cloud_opts = TrainOptions {
        epochs: config.cloud_epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: derive_seed(config.seed, 1),
    };
    let cloud_accuracy = server
        .train_cloud(arch, &cloud_opts)
        .map_err(|e| Error::protocol(format!("cloud training: {e}")))?;
    let cloud_model = server.model().expect("model set by train_cloud").clone();
    push_record(
        &mut audit,
        repetition,
        0,
        "server".to_string(),
        "cloud_train",
        PayloadKind::CloudModelPlaintext,
        fp.clone(),
        plain_bytes,
    );

    let weights = match &config.weights {
        Some(w) => w.clone(),
        None => {
            let total: usize = clients.iter().map(|c| c.train_len()).sum();
            clients
                .iter()
                .map(|c| c.train_len() as f64 / total as f64)
                .collect()
        }
    };

    for round in 1..=config.rounds as u32 {
        // Step 2: encrypted distribution.
        for client in clients.iter_mut() {
            let seed = derive_seed(config.seed, 0x0D00 + round as u64 * 64 + client.subject as u64);
            let wire = server
                .encrypt_model(pk, codec, seed)
                .map_err(|e| Error::protocol(format!("round {round} distribution: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                round,
                "server".to_string(),
                "distribute",
                PayloadKind::CloudModelEncrypted,
                fp.clone(),
                wire.len() as u64,
            );
            client
                .receive(&wire, authority, arch)
                .map_err(|e| Error::protocol(format!("round {round} receive: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                round,
                format!("client_{}", client.subject),
                "receive_model",
                PayloadKind::CloudModelPlaintext,
                fp.clone(),
                plain_bytes,
            );
        }

        // Step 3: local training.
        for client in clients.iter_mut() {
            let opts = TrainOptions {
                epochs: config.client_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                seed: derive_seed(config.seed, 0x7100 + round as u64 * 64 + client.subject as u64),
            };
            client
                .train_local(&opts)
                .map_err(|e| Error::protocol(format!("round {round} local training: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                round,
                format!("client_{}", client.subject),
                "local_train",
                PayloadKind::ClientModelPlaintext,
                fp.clone(),
                plain_bytes,
            );
        }

        // Step 4: encrypted upload and aggregation.
        let mut uploads = Vec::with_capacity(clients.len());
        for (client, &w) in clients.iter().zip(&weights) {
            let seed = derive_seed(config.seed, 0x0600 + round as u64 * 64 + client.subject as u64);
            let wire = client
                .upload(w, pk, codec, seed)
                .map_err(|e| Error::protocol(format!("round {round} upload: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                round,
                format!("client_{}", client.subject),
                "upload",
                PayloadKind::ClientModelEncrypted,
                fp.clone(),
                wire.len() as u64,
            );
            push_record(
                &mut audit,
                repetition,
                round,
                "server".to_string(),
                "receive_upload",
                PayloadKind::ClientModelEncrypted,
                fp.clone(),
                wire.len() as u64,
            );
            uploads.push(wire);
        }
        let upload_bytes: u64 = uploads.iter().map(|u| u.len() as u64).sum();
        server
            .aggregate(&uploads, pk, authority, arch)
            .map_err(|e| Error::protocol(format!("round {round} aggregation: {e}")))?;
        push_record(
            &mut audit,
            repetition,
            round,
            "server".to_string(),
            "homomorphic_sum",
            PayloadKind::AggregateEncrypted,
            fp.clone(),
            upload_bytes / uploads.len().max(1) as u64,
        );
        push_record(
            &mut audit,
            repetition,
            round,
            "key_authority".to_string(),
            "aggregate_decrypt",
            PayloadKind::AggregatePlaintext,
            fp.clone(),
            plain_bytes,
        );
        push_record(
            &mut audit,
            repetition,
            round,
            "server".to_string(),
            "server_update",
            PayloadKind::AggregatePlaintext,
            fp.clone(),
            plain_bytes,
        );

        if config.server_finetune_epochs > 0 {
            let opts = TrainOptions {
                epochs: config.server_finetune_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                seed: derive_seed(config.seed, 0xF1E0 + round as u64),
            };
            server
                .finetune(&opts)
                .map_err(|e| Error::protocol(format!("round {round} server finetune: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                round,
                "server".to_string(),
                "server_finetune",
                PayloadKind::CloudModelPlaintext,
                fp.clone(),
                plain_bytes,
            );
        }
    }

    // Step 5: final distribution and per-client personalization. With
    // zero rounds the protocol's output is the cloud model alone.
    if config.rounds > 0 {
        let final_round = config.rounds as u32 + 1;
        for client in clients.iter_mut() {
            let seed = derive_seed(
                config.seed,
                0xFD00 + final_round as u64 * 64 + client.subject as u64,
            );
            let wire = server
                .encrypt_model(pk, codec, seed)
                .map_err(|e| Error::protocol(format!("final distribution: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                final_round,
                "server".to_string(),
                "distribute",
                PayloadKind::CloudModelEncrypted,
                fp.clone(),
                wire.len() as u64,
            );
            client
                .receive(&wire, authority, arch)
                .map_err(|e| Error::protocol(format!("final receive: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                final_round,
                format!("client_{}", client.subject),
                "receive_model",
                PayloadKind::CloudModelPlaintext,
                fp.clone(),
                plain_bytes,
            );
            client
                .personalize_received(transfer_cfg)
                .map_err(|e| Error::protocol(format!("personalization: {e}")))?;
            push_record(
                &mut audit,
                repetition,
                final_round,
                format!("client_{}", client.subject),
                "personalize",
                PayloadKind::ClientModelPlaintext,
                fp.clone(),
                plain_bytes,
            );
        }
    }

    Ok(ProtocolOutcome {
        cloud_accuracy,
        cloud_model,
        weights,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleWindow, NUM_CHANNELS, NUM_CLASSES, WINDOW_LEN};
    use crate::nn::{activity_cnn, CnnWidths};
    use crate::tensor::Tensor;
    use rand::Rng;

    const KEY_BITS: u32 = 256;

    fn tiny_arch() -> Architecture {
        activity_cnn(
            NUM_CHANNELS,
            WINDOW_LEN,
            NUM_CLASSES,
            &CnnWidths {
                conv1_filters: 2,
                conv2_filters: 3,
                hidden_units: 8,
                embedding_dim: 4,
            },
        )
        .unwrap()
    }

    /// Class-separable windows: each class leans its channels by a
    /// distinct offset so even a tiny model can learn something.
    fn toy_dataset(n: usize, subject: u8, seed: u64) -> HarDataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let label = (i % NUM_CLASSES + 1) as u8;
                let mut t = Tensor::zeros(vec![NUM_CHANNELS, WINDOW_LEN]);
                for (j, v) in t.data_mut().iter_mut().enumerate() {
                    let ch = j / WINDOW_LEN;
                    *v = (label as f64 - 3.5) * 0.3
                        + (ch as f64) * 0.05
                        + rng.gen_range(-0.3..0.3);
                }
                SampleWindow::new(t, label, subject).unwrap()
            })
            .collect();
        HarDataset::new(samples)
    }

    fn quick_config(rounds: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            cloud_epochs: 2,
            client_epochs: 1,
            batch_size: 8,
            learning_rate: 0.05,
            server_finetune_epochs: 0,
            seed: 1234,
            weights: None,
        }
    }

    fn quick_transfer() -> TransferConfig {
        TransferConfig {
            epochs: 1,
            batch_size: 8,
            ..TransferConfig::default()
        }
    }

    fn build_world(
        num_clients: usize,
    ) -> (ServerState, Vec<ClientState>, KeyAuthority, Architecture) {
        let server = ServerState::new(toy_dataset(48, 1, 10), toy_dataset(24, 2, 11)).unwrap();
        let clients = (0..num_clients)
            .map(|i| {
                let subject = 26 + i as u8;
                ClientState::new(
                    subject,
                    toy_dataset(24, subject, 100 + i as u64),
                    toy_dataset(12, subject, 200 + i as u64),
                )
                .unwrap()
            })
            .collect();
        let authority = KeyAuthority::new(KEY_BITS, 77).unwrap();
        (server, clients, authority, tiny_arch())
    }

    #[test]
    fn config_validation() {
        let mut cfg = quick_config(1);
        assert!(cfg.validate(3).is_ok());
        assert!(cfg.validate(0).is_err());
        cfg.weights = Some(vec![0.5, 0.5]);
        assert!(cfg.validate(3).is_err());
        cfg.weights = Some(vec![0.5, 0.2, 0.3]);
        assert!(cfg.validate(3).is_ok());
        cfg.weights = Some(vec![0.5, 0.2, 0.2]);
        assert!(cfg.validate(3).is_err());
        cfg.weights = Some(vec![1.5, -0.3, -0.2]);
        assert!(cfg.validate(3).is_err());
    }

    #[test]
    fn cloud_training_is_deterministic_and_zero_epochs_is_identity() {
        let arch = tiny_arch();
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 5,
        };
        let mut s1 = ServerState::new(toy_dataset(48, 1, 10), toy_dataset(24, 2, 11)).unwrap();
        let mut s2 = ServerState::new(toy_dataset(48, 1, 10), toy_dataset(24, 2, 11)).unwrap();
        let a1 = s1.train_cloud(&arch, &opts).unwrap();
        let a2 = s2.train_cloud(&arch, &opts).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(
            s1.model().unwrap().params().flatten(),
            s2.model().unwrap().params().flatten()
        );

        // Zero epochs: the model equals its seeded initialization.
        let mut s3 = ServerState::new(toy_dataset(48, 1, 10), toy_dataset(24, 2, 11)).unwrap();
        let zero = TrainOptions { epochs: 0, ..opts };
        s3.train_cloud(&arch, &zero).unwrap();
        let init = Network::new_seeded(arch.clone(), derive_seed(zero.seed, 0xC10D)).unwrap();
        assert_eq!(
            s3.model().unwrap().params().flatten(),
            init.params().flatten()
        );
    }

    #[test]
    fn distribution_roundtrip_stays_within_codec_tolerance() {
        let (mut server, mut clients, authority, arch) = build_world(1);
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 3,
        };
        server.train_cloud(&arch, &opts).unwrap();
        let codec = CodecSpec::default();
        let wire = server
            .encrypt_model(authority.public_key(), codec, 42)
            .unwrap();
        clients[0].receive(&wire, &authority, &arch).unwrap();

        let sent = server.model().unwrap().params().flatten();
        let got = clients[0].received().unwrap().params().flatten();
        let tol = 1.0 / (1u64 << codec.scale_bits) as f64;
        let worst = sent
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < tol, "worst deviation {worst} vs tolerance {tol}");

        // Argmax agreement on random windows.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = Tensor::new(
                vec![NUM_CHANNELS, WINDOW_LEN],
                (0..NUM_CHANNELS * WINDOW_LEN)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            assert_eq!(
                server.model().unwrap().predict(&x).unwrap(),
                clients[0].received().unwrap().predict(&x).unwrap()
            );
        }
    }

    #[test]
    fn tampered_distribution_is_rejected() {
        let (mut server, mut clients, authority, arch) = build_world(1);
        let opts = TrainOptions {
            epochs: 0,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 3,
        };
        server.train_cloud(&arch, &opts).unwrap();
        let mut wire = server
            .encrypt_model(authority.public_key(), CodecSpec::default(), 42)
            .unwrap();
        wire[1] ^= 0xFF;
        assert!(clients[0].receive(&wire, &authority, &arch).is_err());
    }

    #[test]
    fn aggregation_matches_plaintext_oracle() {
        let (mut server, mut clients, authority, arch) = build_world(5);
        let codec = CodecSpec::default();
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 3,
        };
        server.train_cloud(&arch, &opts).unwrap();

        // Give every client a distinct local model.
        let total: usize = clients.iter().map(|c| c.train_len()).sum();
        let weights: Vec<f64> = clients
            .iter()
            .map(|c| c.train_len() as f64 / total as f64)
            .collect();
        let mut uploads = Vec::new();
        for (i, client) in clients.iter_mut().enumerate() {
            let wire = server
                .encrypt_model(authority.public_key(), codec, 50 + i as u64)
                .unwrap();
            client.receive(&wire, &authority, &arch).unwrap();
            let lopts = TrainOptions {
                epochs: 1,
                batch_size: 8,
                learning_rate: 0.05,
                seed: 60 + i as u64,
            };
            client.train_local(&lopts).unwrap();
            uploads.push(
                client
                    .upload(weights[i], authority.public_key(), codec, 70 + i as u64)
                    .unwrap(),
            );
        }

        // Plaintext weighted mean of the same local models.
        let mut oracle = vec![0.0; server.model().unwrap().params().param_count()];
        for (client, &w) in clients.iter().zip(&weights) {
            for (o, v) in oracle
                .iter_mut()
                .zip(client.local().unwrap().params().flatten())
            {
                *o += w * v;
            }
        }

        server
            .aggregate(&uploads, authority.public_key(), &authority, &arch)
            .unwrap();
        let got = server.model().unwrap().params().flatten();
        let tol = clients.len() as f64 / (1u64 << codec.scale_bits) as f64;
        let worst = oracle
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < tol, "worst deviation {worst} vs tolerance {tol}");
    }

    #[test]
    fn identical_uploads_average_to_themselves() {
        let (mut server, mut clients, authority, arch) = build_world(2);
        let codec = CodecSpec::default();
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 3,
        };
        server.train_cloud(&arch, &opts).unwrap();
        let reference = server.model().unwrap().params().flatten();

        // Both clients upload the received model untouched (zero epochs),
        // with equal weights: the aggregate equals the distributed model.
        let mut uploads = Vec::new();
        for (i, client) in clients.iter_mut().enumerate() {
            let wire = server
                .encrypt_model(authority.public_key(), codec, 80 + i as u64)
                .unwrap();
            client.receive(&wire, &authority, &arch).unwrap();
            let lopts = TrainOptions {
                epochs: 0,
                batch_size: 8,
                learning_rate: 0.05,
                seed: 0,
            };
            client.train_local(&lopts).unwrap();
            uploads.push(
                client
                    .upload(0.5, authority.public_key(), codec, 90 + i as u64)
                    .unwrap(),
            );
        }
        server
            .aggregate(&uploads, authority.public_key(), &authority, &arch)
            .unwrap();
        let got = server.model().unwrap().params().flatten();
        let tol = 2.0 / (1u64 << codec.scale_bits) as f64;
        let worst = reference
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < tol, "worst deviation {worst}");
    }

    #[test]
    fn zero_rounds_yields_cloud_model_only() {
        let (mut server, mut clients, authority, arch) = build_world(2);
        let outcome = run_protocol(
            &mut server,
            &mut clients,
            &authority,
            &arch,
            CodecSpec::default(),
            &quick_config(0),
            &quick_transfer(),
            0,
        )
        .unwrap();
        assert!(server.model().is_some());
        assert!(clients.iter().all(|c| c.personalized().is_none()));
        assert!(clients.iter().all(|c| c.received().is_none()));
        assert_eq!(server.fingerprints().len(), 1);
        assert!(outcome.cloud_accuracy.is_finite());
    }

    #[test]
    fn full_round_produces_personalized_models_and_clean_audit() {
        let (mut server, mut clients, authority, arch) = build_world(2);
        let outcome = run_protocol(
            &mut server,
            &mut clients,
            &authority,
            &arch,
            CodecSpec::default(),
            &quick_config(1),
            &quick_transfer(),
            3,
        )
        .unwrap();

        assert!(clients.iter().all(|c| c.personalized().is_some()));
        // One fingerprint for the cloud model, one per aggregation, and
        // they are all the same architecture.
        assert_eq!(server.fingerprints().len(), 2);
        assert!(server
            .fingerprints()
            .iter()
            .all(|f| *f == arch.fingerprint().hex()));

        // Audit: nonempty, correct repetition tag, privacy contract holds.
        assert!(!outcome.audit.is_empty());
        assert!(outcome.audit.records().iter().all(|r| r.repetition == 3));
        assert!(outcome.audit.server_plaintext_violations().is_empty());
        // Every encrypted payload has a nonzero byte count.
        assert!(outcome
            .audit
            .records()
            .iter()
            .filter(|r| matches!(
                r.payload,
                PayloadKind::CloudModelEncrypted | PayloadKind::ClientModelEncrypted
            ))
            .all(|r| r.bytes > 0));
    }

    #[test]
    fn protocol_is_deterministic() {
        let run = || {
            let (mut server, mut clients, authority, arch) = build_world(2);
            run_protocol(
                &mut server,
                &mut clients,
                &authority,
                &arch,
                CodecSpec::default(),
                &quick_config(2),
                &quick_transfer(),
                0,
            )
            .unwrap();
            (
                server.fingerprints().to_vec(),
                server.model().unwrap().params().flatten(),
                clients
                    .iter()
                    .map(|c| c.personalized().unwrap().params().flatten())
                    .collect::<Vec<_>>(),
            )
        };
        let (f1, m1, p1) = run();
        let (f2, m2, p2) = run();
        assert_eq!(f1, f2);
        assert_eq!(m1, m2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn clients_with_identical_seeds_and_data_match() {
        let arch = tiny_arch();
        let authority = KeyAuthority::new(KEY_BITS, 5).unwrap();
        let codec = CodecSpec::default();
        let mut server = ServerState::new(toy_dataset(48, 1, 10), toy_dataset(24, 2, 11)).unwrap();
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 3,
        };
        server.train_cloud(&arch, &opts).unwrap();

        let make_client = || {
            let mut c = ClientState::new(
                26,
                toy_dataset(24, 26, 500),
                toy_dataset(12, 26, 501),
            )
            .unwrap();
            let wire = server
                .encrypt_model(authority.public_key(), codec, 7)
                .unwrap();
            c.receive(&wire, &authority, &arch).unwrap();
            let lopts = TrainOptions {
                epochs: 2,
                batch_size: 8,
                learning_rate: 0.05,
                seed: 11,
            };
            c.train_local(&lopts).unwrap();
            c
        };
        let c1 = make_client();
        let c2 = make_client();
        assert_eq!(
            c1.local().unwrap().params().flatten(),
            c2.local().unwrap().params().flatten()
        );
    }
}
