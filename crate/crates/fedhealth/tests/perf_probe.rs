//! Rough throughput probe for the training loop. Ignored by default; run
//! with `cargo test --test perf_probe -- --ignored --nocapture` to see how
//! long one epoch takes at different capacity settings on this machine.

use fedhealth::nn::{activity_cnn, train, CnnWidths, LabeledSample, Network, TrainOptions};
use fedhealth::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

fn probe(widths: &CnnWidths, samples: usize) -> f64 {
    let arch = activity_cnn(9, 128, 6, widths).unwrap();
    let mut net = Network::new_seeded(arch, 1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let xs: Vec<Tensor> = (0..samples)
        .map(|_| {
            let data = (0..9 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(vec![9, 128], data).unwrap()
        })
        .collect();
    let labeled: Vec<LabeledSample> = xs
        .iter()
        .enumerate()
        .map(|(i, input)| LabeledSample {
            input,
            class: i % 6,
        })
        .collect();
    let start = Instant::now();
    train(
        &mut net,
        &labeled,
        &TrainOptions {
            epochs: 1,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 3,
        },
        None,
    )
    .unwrap();
    start.elapsed().as_secs_f64()
}

#[test]
#[ignore = "timing probe, run manually"]
fn epoch_timings() {
    let candidates = [
        (
            "slim",
            CnnWidths {
                conv1_filters: 8,
                conv2_filters: 16,
                hidden_units: 40,
                embedding_dim: 24,
            },
        ),
        (
            "default",
            CnnWidths::default(),
        ),
        (
            "wide",
            CnnWidths {
                conv1_filters: 32,
                conv2_filters: 64,
                hidden_units: 128,
                embedding_dim: 64,
            },
        ),
    ];
    for (name, widths) in &candidates {
        let secs = probe(widths, 512);
        println!(
            "{name:>8}: {:.3} s for one epoch over 512 samples ({:.2} ms/sample)",
            secs,
            secs * 1000.0 / 512.0
        );
    }
}
