//! Command line driver: runs the full experiment, the crypto and
//! gradient self-checks, and the synthetic corpus generator.

use clap::{Parser, Subcommand};
use fedhealth::crypto::MIN_SECURE_BITS;
use fedhealth::data::synth::{ensure_corpus, SynthSpec};
use fedhealth::data::load_har;
use fedhealth::eval::{
    all_passed, gradcheck_suite, run_experiment, verify_crypto_suite, write_artifacts, CheckLine,
    RunConfig,
};
use fedhealth::transfer::Variant;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "fedhealth", version, about = "Federated activity recognition simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write report files.
    Run {
        /// JSON run configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root (the directory holding train/ and test/).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for report.csv and friends.
        #[arg(long)]
        out: PathBuf,
        /// Override the personalization variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Override the repetition count.
        #[arg(long)]
        repeats: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Allow key sizes below the secure minimum (fast, test only).
        #[arg(long)]
        insecure_small_keys: bool,
    },
    /// Self-check the encryption path end to end.
    VerifyCrypto {
        /// Key size in bits.
        #[arg(long, default_value_t = 256)]
        key_bits: u32,
        #[arg(long, default_value_t = 14)]
        seed: u64,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck,
    /// Generate the synthetic sensor corpus.
    GenData {
        /// Directory to write train/ and test/ into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Total number of windows across both splits.
        #[arg(long, default_value_t = 10_299)]
        windows: usize,
    },
}

fn print_lines(lines: &[CheckLine]) {
    for l in lines {
        let flag = if l.passed { "PASS" } else { "FAIL" };
        println!("[{flag}] {}: {}", l.name, l.detail);
    }
}

fn run(cli: Cli) -> Result<bool, fedhealth::Error> {
    match cli.command {
        Command::Run {
            config,
            data,
            out,
            variant,
            repeats,
            seed,
            insecure_small_keys,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
                None => RunConfig::default(),
            };
            if let Some(v) = variant {
                cfg.transfer.variant = v;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if cfg.key_bits < MIN_SECURE_BITS && !insecure_small_keys {
                return Err(fedhealth::Error::config(format!(
                    "{} bit keys are below the secure minimum of {}; \
                     pass --insecure-small-keys to accept this for testing",
                    cfg.key_bits, MIN_SECURE_BITS
                )));
            }
            cfg.validate()?;

            println!("loading dataset from {}", data.display());
            let dataset = load_har(&data)?;
            println!(
                "{} windows, {} subjects; running {} repetition(s)",
                dataset.len(),
                dataset.subjects().len(),
                cfg.repeats
            );
            let start = Instant::now();
            let report = run_experiment(&dataset, &cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            write_artifacts(&report, &cfg, &out)?;
            print!("{}", report.summary_text());
            println!("elapsed: {elapsed:.1}s");
            println!("report written to {}", out.display());
            Ok(true)
        }
        Command::VerifyCrypto { key_bits, seed } => {
            let lines = verify_crypto_suite(key_bits, seed)?;
            print_lines(&lines);
            Ok(all_passed(&lines))
        }
        Command::Gradcheck => {
            let lines = gradcheck_suite()?;
            print_lines(&lines);
            Ok(all_passed(&lines))
        }
        Command::GenData { out, seed, windows } => {
            let spec = SynthSpec {
                seed,
                total_windows: windows,
            };
            let summary = ensure_corpus(&out, &spec)?;
            println!(
                "corpus at {}: {} train + {} test windows, {} subjects",
                out.display(),
                summary.train_windows,
                summary.test_windows,
                summary.per_subject.len()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
