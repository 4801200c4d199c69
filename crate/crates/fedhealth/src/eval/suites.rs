//! Self-check suites behind the CLI: end-to-end checks of the
//! encryption path and of every gradient against finite differences.
//! Each check yields one line with a pass flag and a measured detail.

use crate::crypto::{
    add_ciphertexts, decrypt, decrypt_params, encrypt, encrypt_params, keygen, CodecSpec,
    FixedPointCodec,
};
use crate::error::Result;
use crate::nn::gradcheck::{
    flatten_grads, max_rel_err, numeric_grad, probe_architecture, run_op_checks,
};
use crate::nn::{BatchPenalty, GradSet, ModelParams, Network};
use crate::tensor::Tensor;
use crate::transfer::{coral_loss, AlignmentPenalty, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, passed: bool, detail: String) -> CheckLine {
        CheckLine {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

pub fn all_passed(lines: &[CheckLine]) -> bool {
    lines.iter().all(|l| l.passed)
}

/// Exercises the encryption path end to end: scalar homomorphic
/// addition over many random pairs, then a whole-model weighted
/// average against a plaintext oracle.
pub fn verify_crypto_suite(key_bits: u32, seed: u64) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let spec = CodecSpec::default();
    let kp = keygen(key_bits, seed)?;
    let pk = kp.public();
    let codec = FixedPointCodec::new(spec, pk.modulus())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xC0DE);

    // 1000 random pairs: encrypt, add under encryption, decrypt, and
    // compare against plain addition. Each fixed-point encoding may be
    // off by half a step, so the sum tolerates two.
    let pairs = 1000;
    let tol = 2.0 / spec.scale();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x: f64 = rng.gen_range(-10.0..10.0);
        let y: f64 = rng.gen_range(-10.0..10.0);
        let cx = encrypt(pk, &codec.encode(x)?, &mut rng)?;
        let cy = encrypt(pk, &codec.encode(y)?, &mut rng)?;
        let csum = add_ciphertexts(pk, &cx, &cy)?;
        let got = codec.decode(&decrypt(&kp, &csum)?)?;
        worst = worst.max((got - (x + y)).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    lines.push(CheckLine::new(
        "encrypted addition roundtrip",
        worst <= tol && elapsed < 60.0,
        format!(
            "{pairs} pairs, worst error {worst:.3e} (tolerance {tol:.3e}), {elapsed:.1}s"
        ),
    ));

    // Five random models, random weights summing to 1: the decrypted
    // homomorphic sum of the pre-scaled encryptions must match the
    // plaintext weighted mean. Each model contributes one encoding
    // error, so the aggregate tolerates five steps.
    let arch = probe_architecture();
    let models: Vec<ModelParams> = (0..5)
        .map(|i| {
            Network::new_seeded(arch.clone(), seed ^ (100 + i))
                .map(|n| n.params().clone())
        })
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = (0..models.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut oracle = vec![0.0; models[0].param_count()];
    for (m, &w) in models.iter().zip(&weights) {
        for (o, v) in oracle.iter_mut().zip(m.flatten()) {
            *o += w * v;
        }
    }

    let mut sum = None;
    for (m, &w) in models.iter().zip(&weights) {
        let ep = encrypt_params(&m.scaled(w), pk, spec, &mut rng)?;
        sum = Some(match sum {
            None => ep,
            Some(acc) => ep.add(&acc, pk)?,
        });
    }
    let got = decrypt_params(&sum.expect("five models"), &kp, &arch, false)?.flatten();
    let agg_tol = models.len() as f64 / spec.scale();
    let agg_worst = oracle
        .iter()
        .zip(&got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    lines.push(CheckLine::new(
        "encrypted weighted model average",
        agg_worst <= agg_tol,
        format!(
            "5 models, {} parameters, worst error {agg_worst:.3e} (tolerance {agg_tol:.3e})",
            oracle.len()
        ),
    ));

    Ok(lines)
}

/// Checks every analytic gradient against central finite differences:
/// each kernel on its own, the whole network under cross-entropy, and
/// the complete training objective including the alignment penalty.
pub fn gradcheck_suite() -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for entry in run_op_checks()? {
        lines.push(CheckLine::new(
            &entry.name,
            entry.passed,
            format!(
                "max relative error {:.3e} (tolerance {:.3e})",
                entry.max_rel_err, entry.tolerance
            ),
        ));
    }

    let entry = full_objective_check(0.01, 31)?;
    lines.push(CheckLine::new(
        "objective/cross_entropy_plus_alignment",
        entry.0 < 1e-4,
        format!("max relative error {:.3e} (tolerance 1.000e-4)", entry.0),
    ));

    Ok(lines)
}

/// Finite-difference check of the full personalization objective, mean
/// cross-entropy plus `eta` times the second-order alignment penalty,
/// over every weight in a small network. Returns the worst relative
/// error and the parameter count it covered.
pub fn full_objective_check(eta: f64, seed: u64) -> Result<(f64, usize)> {
    let arch = probe_architecture();
    let net = Network::new_seeded(arch.clone(), seed)?;
    let reference = Network::new_seeded(arch.clone(), seed ^ 0xFF)?
        .params()
        .clone();
    let penalty = AlignmentPenalty::new(&reference, "emb", eta, Variant::Coral)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let input_dims = vec![3, 24];
    let classes = 4;
    let data: Vec<(Tensor, usize)> = (0..6)
        .map(|_| {
            let x = Tensor::new(
                input_dims.clone(),
                (0..3 * 24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )?;
            Ok((x, rng.gen_range(0..classes)))
        })
        .collect::<Result<_>>()?;

    // Analytic side: batch-mean cross-entropy gradients, then the
    // penalty's contribution to the alignment layer.
    let mut grads = GradSet::zeros_like(net.params());
    for (x, class) in &data {
        let trace = net.forward_trace(x)?;
        net.backward_into(&trace, *class, &mut grads)?;
    }
    grads.scale(1.0 / data.len() as f64);
    penalty.apply(net.params(), &mut grads)?;
    let analytic = flatten_grads(&net, &grads);

    // Numeric side: re-evaluate the objective at perturbed parameters.
    let emb_pos = net
        .params()
        .layers()
        .iter()
        .position(|l| l.name == "emb")
        .expect("probe network has the alignment layer");
    let objective = |flat: &[f64]| -> Result<f64> {
        let params = ModelParams::unflatten(&arch, flat)?;
        let probe = Network::from_parts(arch.clone(), params)?;
        let mut ce = 0.0;
        for (x, class) in &data {
            let trace = probe.forward_trace(x)?;
            ce += -trace.probs().data()[*class].max(1e-12).ln();
        }
        ce /= data.len() as f64;
        let current_t = probe.params().layers()[emb_pos].weights.transposed()?;
        Ok(ce + eta * coral_loss(&current_t, penalty.reference_t())?)
    };
    let flat = net.params().flatten();
    let numeric = numeric_grad(&mut |f| objective(f), &flat, 1e-5)?;

    Ok((max_rel_err(&analytic, &numeric), flat.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crypto_suite_passes_with_test_keys() {
        let lines = verify_crypto_suite(256, 99).unwrap();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            assert!(l.passed, "{}: {}", l.name, l.detail);
        }
    }

    #[test]
    fn gradcheck_suite_passes() {
        let lines = gradcheck_suite().unwrap();
        assert!(lines.len() > 5);
        for l in &lines {
            assert!(l.passed, "{}: {}", l.name, l.detail);
        }
        assert!(lines
            .iter()
            .any(|l| l.name == "objective/cross_entropy_plus_alignment"));
    }

    #[test]
    fn full_objective_check_is_tight() {
        let (worst, count) = full_objective_check(0.01, 7).unwrap();
        assert!(worst < 1e-4, "worst relative error {worst}");
        assert!(count > 100);
    }
}
