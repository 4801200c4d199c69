//! Deterministic synthetic corpus in the exact on-disk layout the loader
//! expects. The signal model is built so the learning problem keeps the
//! shape of real wearable data:
//!
//! * dynamic activities (walking and the two stair classes) are
//!   subject-styled oscillations that differ in stride frequency,
//!   harmonic content and per-axis amplitude;
//! * static activities differ mainly in the orientation of gravity in the
//!   total-acceleration channels, with small postural sway;
//! * every subject carries a persistent style (amplitude, tempo, phase
//!   habits, sensor offsets, mounting tilt), and window phases are
//!   randomized so nearest-neighbor matching across subjects degrades
//!   while frequency- and envelope-based features stay informative;
//! * late-numbered subjects (the ones an experiment isolates as local
//!   wearers) draw their style from a wider band, so a model trained only
//!   on the others starts with a visible deficit there.

use super::{CHANNEL_NAMES, NUM_CHANNELS, NUM_CLASSES, NUM_SUBJECTS, WINDOW_LEN};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Subjects whose rows go under `train/`, as in the published corpus.
pub const TRAIN_SUBJECTS: [u8; 21] = [
    1, 3, 5, 6, 7, 8, 11, 14, 15, 16, 17, 19, 21, 22, 23, 25, 26, 27, 28, 29, 30,
];
/// Subjects whose rows go under `test/`.
pub const TEST_SUBJECTS: [u8; 9] = [2, 4, 9, 10, 12, 13, 18, 20, 24];

/// Total windows across both splits in the published corpus.
pub const STANDARD_TOTAL_WINDOWS: usize = 10_299;

/// Subjects from this id upward use the widened style band.
const DIVERGENT_FROM: u8 = 26;

const SAMPLE_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub total_windows: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            total_windows: STANDARD_TOTAL_WINDOWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub train_windows: usize,
    pub test_windows: usize,
    pub per_subject: [usize; NUM_SUBJECTS as usize],
}

/// Stride frequency in Hz per dynamic class (walk, upstairs, downstairs).
/// Bands stay disjoint even under the widest subject tempo jitter.
const DYN_FREQ: [f64; 3] = [1.80, 1.45, 2.15];
/// Second-harmonic weight; stair descent is the most impact-heavy.
const DYN_HARM2: [f64; 3] = [0.25, 0.42, 0.55];
/// Per-axis oscillation amplitude of body acceleration. The classes
/// share one axis profile and differ by a factor smaller than the
/// between-subject amplitude spread: energy alone cannot tell them
/// apart across wearers, the rhythm can.
const DYN_AMP_ACC: [[f64; 3]; 3] = [
    [0.570, 0.405, 0.460],
    [0.620, 0.440, 0.500],
    [0.694, 0.493, 0.560],
];
/// Per-axis oscillation amplitude of the gyroscope.
const DYN_AMP_GYRO: [[f64; 3]; 3] = [
    [0.456, 0.551, 0.361],
    [0.480, 0.580, 0.380],
    [0.528, 0.638, 0.418],
];
/// Small posture lean added to body acceleration per dynamic class.
/// Kept below the spread of subject sensor offsets so a raw-distance
/// matcher cannot rely on it across wearers.
const DYN_LEAN: [[f64; 3]; 3] = [
    [0.02, 0.00, -0.01],
    [0.05, 0.02, 0.02],
    [-0.03, 0.01, 0.03],
];
/// Gravity direction while upright and moving, per dynamic class.
const DYN_GRAVITY: [[f64; 3]; 3] = [
    [0.10, 0.12, 0.98],
    [0.15, 0.14, 0.96],
    [0.06, 0.10, 0.98],
];

/// Gravity direction per static class (sitting, standing, laying).
/// Sitting and standing are deliberately close: mounting tilt moves a
/// wearer's vector by a comparable angle, so orientation alone does not
/// settle that pair across subjects; the sway rhythm below does.
const STATIC_GRAVITY: [[f64; 3]; 3] = [
    [0.22, 0.37, 0.90],
    [0.17, 0.31, 0.94],
    [0.94, 0.30, 0.16],
];
/// Postural sway: one shared amplitude, class-specific frequency. An
/// energy profile carries no class signal here; the rate does.
const STATIC_SWAY_AMP: f64 = 0.14;
const STATIC_SWAY_FREQ: [f64; 3] = [0.50, 0.90, 0.25];

const NOISE_DYNAMIC: f64 = 0.11;
const NOISE_STATIC: f64 = 0.045;
const NOISE_TOTAL_EXTRA: f64 = 0.012;

/// Relative phase habits of the three accelerometer axes.
const AXIS_LAG: [f64; 3] = [0.0, 2.09, 4.19];

/// Per-sample standard deviation of the phase random walk. Cadence
/// wanders continuously, so no two windows stay sample-aligned across
/// their full length; rhythm remains readable locally.
const PHASE_WALK_DYNAMIC: f64 = 0.17;
const PHASE_WALK_STATIC: f64 = 0.16;
/// Per-window tempo deviation on top of the subject's habitual pace.
const TEMPO_JITTER: f64 = 0.04;
/// Depth of the slow amplitude envelope on dynamic windows.
const ENVELOPE_DEPTH: f64 = 0.25;

struct SubjectStyle {
    amp_mult: f64,
    gyro_mult: f64,
    freq_mult: f64,
    tilt_xz: f64,
    tilt_yz: f64,
    offsets: [f64; NUM_CHANNELS],
}

impl SubjectStyle {
    fn draw(rng: &mut ChaCha20Rng, divergent: bool) -> SubjectStyle {
        // The widened band roughly doubles how far a wearer can sit from
        // the population center.
        let w = if divergent { 2.0 } else { 1.0 };
        let mut offsets = [0.0; NUM_CHANNELS];
        for o in offsets.iter_mut() {
            *o = rng.gen_range(-0.05 * w..0.05 * w);
        }
        SubjectStyle {
            amp_mult: 1.0 + rng.gen_range(-0.16 * w..0.16 * w),
            gyro_mult: 1.0 + rng.gen_range(-0.14 * w..0.14 * w),
            freq_mult: 1.0 + rng.gen_range(-0.045 * w..0.045 * w),
            tilt_xz: rng.gen_range(-0.15 * w..0.15 * w),
            tilt_yz: rng.gen_range(-0.15 * w..0.15 * w),
            offsets,
        }
    }

    /// Mounting tilt applied to a gravity direction: two planar rotations.
    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let (s1, c1) = self.tilt_xz.sin_cos();
        let a = [c1 * v[0] + s1 * v[2], v[1], -s1 * v[0] + c1 * v[2]];
        let (s2, c2) = self.tilt_yz.sin_cos();
        [a[0], c2 * a[1] + s2 * a[2], -s2 * a[1] + c2 * a[2]]
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// One generated window: channel-major samples plus its label.
struct RawWindow {
    data: Vec<f64>,
    label: u8,
}

/// Integrated phase with white tempo perturbation. Two windows that share
/// a nominal pace still decohere over their length, so no distant window
/// lines up sample-for-sample; the rhythm stays readable over spans a
/// convolution kernel sees.
fn phase_walk(rng: &mut ChaCha20Rng, start: f64, omega: f64, step_sd: f64) -> Vec<f64> {
    let mut walk = Vec::with_capacity(WINDOW_LEN);
    let mut acc = start;
    for _ in 0..WINDOW_LEN {
        walk.push(acc);
        acc += omega + step_sd * normal(rng);
    }
    walk
}

fn gen_window(rng: &mut ChaCha20Rng, style: &SubjectStyle, label: u8) -> RawWindow {
    let mut data = vec![0.0; NUM_CHANNELS * WINDOW_LEN];
    let c = (label - 1) as usize;
    let window_phase = rng.gen_range(0.0..2.0 * PI);
    let tempo = 1.0 + rng.gen_range(-TEMPO_JITTER..TEMPO_JITTER);

    if c < 3 {
        // Dynamic: styled oscillation plus harmonic, gravity folded into
        // the total-acceleration channels. One walk drives every channel
        // so the axes stay mutually coherent while the window as a whole
        // drifts.
        let omega = 2.0 * PI * DYN_FREQ[c] * style.freq_mult * tempo / SAMPLE_RATE_HZ;
        let walk = phase_walk(rng, window_phase, omega, PHASE_WALK_DYNAMIC);
        let env_omega = 2.0 * PI * rng.gen_range(0.15..0.40) / SAMPLE_RATE_HZ;
        let env_phase = rng.gen_range(0.0..2.0 * PI);
        let gravity = style.rotate(DYN_GRAVITY[c]);
        for axis in 0..3 {
            let a_acc = DYN_AMP_ACC[c][axis] * style.amp_mult;
            let a_gyro = DYN_AMP_GYRO[c][axis] * style.gyro_mult;
            for t in 0..WINDOW_LEN {
                let arg = walk[t] + AXIS_LAG[axis];
                let env = 1.0 + ENVELOPE_DEPTH * (env_omega * t as f64 + env_phase).sin();
                let wave = arg.sin() + DYN_HARM2[c] * (2.0 * arg + 0.6).sin();
                let body = DYN_LEAN[c][axis]
                    + style.offsets[axis]
                    + a_acc * env * wave
                    + NOISE_DYNAMIC * normal(rng);
                let gyro_wave = (arg + PI / 2.0).sin()
                    + DYN_HARM2[c] * (2.0 * arg + 1.9).sin();
                let gyro = style.offsets[3 + axis]
                    + a_gyro * env * gyro_wave
                    + NOISE_DYNAMIC * normal(rng);
                let total = gravity[axis]
                    + body
                    + style.offsets[6 + axis]
                    + NOISE_TOTAL_EXTRA * normal(rng);
                data[axis * WINDOW_LEN + t] = body;
                data[(3 + axis) * WINDOW_LEN + t] = gyro;
                data[(6 + axis) * WINDOW_LEN + t] = total;
            }
        }
    } else {
        // Static: gravity orientation plus a class-rhythmed sway.
        let s = c - 3;
        let omega = 2.0 * PI * STATIC_SWAY_FREQ[s] * style.freq_mult * tempo / SAMPLE_RATE_HZ;
        let walk = phase_walk(rng, window_phase, omega, PHASE_WALK_STATIC);
        let gravity = style.rotate(STATIC_GRAVITY[s]);
        let sway = STATIC_SWAY_AMP * style.amp_mult * (1.0 + rng.gen_range(-0.15..0.15));
        for axis in 0..3 {
            for t in 0..WINDOW_LEN {
                let arg = walk[t] + AXIS_LAG[axis];
                let body = style.offsets[axis]
                    + sway * arg.sin()
                    + NOISE_STATIC * normal(rng);
                let gyro = style.offsets[3 + axis]
                    + 0.5 * sway * (arg + PI / 2.0).sin()
                    + NOISE_STATIC * normal(rng);
                let total = gravity[axis]
                    + body
                    + style.offsets[6 + axis]
                    + NOISE_TOTAL_EXTRA * normal(rng);
                data[axis * WINDOW_LEN + t] = body;
                data[(3 + axis) * WINDOW_LEN + t] = gyro;
                data[(6 + axis) * WINDOW_LEN + t] = total;
            }
        }
    }
    RawWindow { data, label }
}

/// Splits `total` into `parts` nonnegative counts that differ by at most
/// one from an even share, with `jitter` moved between random pairs.
fn spread_counts(rng: &mut ChaCha20Rng, total: usize, parts: usize, jitter: usize) -> Vec<usize> {
    let base = total / parts;
    let mut counts = vec![base; parts];
    for c in counts.iter_mut().take(total % parts) {
        *c += 1;
    }
    // Move samples between random pairs so sizes vary like real wearers.
    for _ in 0..parts * 2 {
        let from = rng.gen_range(0..parts);
        let to = rng.gen_range(0..parts);
        let moved = rng.gen_range(0..=jitter);
        let moved = moved.min(counts[from].saturating_sub(base / 2));
        counts[from] -= moved;
        counts[to] += moved;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    counts
}

fn write_matrix(path: &Path, rows: &[&RawWindow], channel: usize) -> Result<()> {
    let f = File::create(path)
        .map_err(|e| Error::parse(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    for row in rows {
        let slice = &row.data[channel * WINDOW_LEN..(channel + 1) * WINDOW_LEN];
        let mut line = String::with_capacity(WINDOW_LEN * 15);
        for v in slice {
            line.push(' ');
            line.push_str(&format!("{v:.7e}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn write_split(
    root: &Path,
    split: &str,
    rows: &[(u8, RawWindow)],
) -> Result<()> {
    let split_dir = root.join(split);
    let sig_dir = split_dir.join("Inertial Signals");
    fs::create_dir_all(&sig_dir)?;
    let windows: Vec<&RawWindow> = rows.iter().map(|(_, w)| w).collect();
    for (ci, name) in CHANNEL_NAMES.iter().enumerate() {
        write_matrix(&sig_dir.join(format!("{name}_{split}.txt")), &windows, ci)?;
    }
    let mut y = BufWriter::new(File::create(split_dir.join(format!("y_{split}.txt")))?);
    let mut s = BufWriter::new(File::create(
        split_dir.join(format!("subject_{split}.txt")),
    )?);
    for (subject, w) in rows {
        writeln!(y, "{}", w.label)?;
        writeln!(s, "{subject}")?;
    }
    y.flush()?;
    s.flush()?;
    Ok(())
}

/// Generates the corpus under `root`, creating `root/train` and
/// `root/test`. Fully deterministic in `spec`.
pub fn generate_corpus(root: &Path, spec: &SynthSpec) -> Result<CorpusSummary> {
    if spec.total_windows < 60 * NUM_SUBJECTS as usize {
        return Err(Error::config(format!(
            "need at least {} windows for 30 subjects with all classes",
            60 * NUM_SUBJECTS as usize
        )));
    }
    let mut seed_rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let subject_counts = spread_counts(
        &mut seed_rng,
        spec.total_windows,
        NUM_SUBJECTS as usize,
        spec.total_windows / NUM_SUBJECTS as usize / 8,
    );

    let mut train_rows: Vec<(u8, RawWindow)> = Vec::new();
    let mut test_rows: Vec<(u8, RawWindow)> = Vec::new();
    let mut per_subject = [0usize; NUM_SUBJECTS as usize];

    for subject in 1..=NUM_SUBJECTS {
        let idx = (subject - 1) as usize;
        let count = subject_counts[idx];
        per_subject[idx] = count;
        // One independent stream per subject, derived from the master
        // seed, so corpus content does not depend on generation order.
        let mut rng =
            ChaCha20Rng::seed_from_u64(spec.seed ^ (0x5EED_0000 + subject as u64 * 7919));
        let style = SubjectStyle::draw(&mut rng, subject >= DIVERGENT_FROM);
        let class_counts = spread_counts(&mut rng, count, NUM_CLASSES, count / NUM_CLASSES / 6);

        let rows: &mut Vec<(u8, RawWindow)> = if TRAIN_SUBJECTS.contains(&subject) {
            &mut train_rows
        } else {
            &mut test_rows
        };
        for (c, &n) in class_counts.iter().enumerate() {
            for _ in 0..n {
                rows.push((subject, gen_window(&mut rng, &style, (c + 1) as u8)));
            }
        }
    }

    write_split(root, "train", &train_rows)?;
    write_split(root, "test", &test_rows)?;
    Ok(CorpusSummary {
        train_windows: train_rows.len(),
        test_windows: test_rows.len(),
        per_subject,
    })
}

/// Generates the corpus only if `root` does not already hold one made
/// with the same spec. A marker file records the spec used.
pub fn ensure_corpus(root: &Path, spec: &SynthSpec) -> Result<CorpusSummary> {
    let marker = root.join(".synth-marker");
    let tag = format!("seed={} windows={}", spec.seed, spec.total_windows);
    if let Ok(existing) = fs::read_to_string(&marker) {
        if existing.trim() == tag {
            let ds = super::load_har(root)?;
            let mut per_subject = [0usize; NUM_SUBJECTS as usize];
            for s in ds.samples() {
                per_subject[(s.subject_id - 1) as usize] += 1;
            }
            let test_windows: usize = TEST_SUBJECTS
                .iter()
                .map(|&s| per_subject[(s - 1) as usize])
                .sum();
            return Ok(CorpusSummary {
                train_windows: ds.len() - test_windows,
                test_windows,
                per_subject,
            });
        }
    }
    let summary = generate_corpus(root, spec)?;
    fs::write(&marker, tag)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_har;
    use std::collections::BTreeSet;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            seed: 42,
            total_windows: 2100,
        }
    }

    #[test]
    fn corpus_loads_with_expected_population() {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate_corpus(dir.path(), &small_spec()).unwrap();
        assert_eq!(summary.train_windows + summary.test_windows, 2100);

        let ds = load_har(dir.path()).unwrap();
        assert_eq!(ds.len(), 2100);
        assert_eq!(ds.subjects(), (1..=30u8).collect::<BTreeSet<u8>>());
        for (c, &n) in ds.label_histogram().iter().enumerate() {
            assert!(n > 0, "class {} missing", c + 1);
        }
    }

    #[test]
    fn split_membership_follows_subject_assignment() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(dir.path(), &small_spec()).unwrap();
        let train_only = load_har_split_subjects(dir.path(), "train");
        let test_only = load_har_split_subjects(dir.path(), "test");
        assert_eq!(
            train_only,
            TRAIN_SUBJECTS.iter().copied().collect::<BTreeSet<u8>>()
        );
        assert_eq!(
            test_only,
            TEST_SUBJECTS.iter().copied().collect::<BTreeSet<u8>>()
        );
    }

    fn load_har_split_subjects(root: &Path, split: &str) -> BTreeSet<u8> {
        std::fs::read_to_string(root.join(split).join(format!("subject_{split}.txt")))
            .unwrap()
            .lines()
            .map(|l| l.trim().parse().unwrap())
            .collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_corpus(d1.path(), &small_spec()).unwrap();
        generate_corpus(d2.path(), &small_spec()).unwrap();
        for split in ["train", "test"] {
            for name in ["body_acc_x", "total_acc_z"] {
                let p = format!("{split}/Inertial Signals/{name}_{split}.txt");
                let a = std::fs::read(d1.path().join(&p)).unwrap();
                let b = std::fs::read(d2.path().join(&p)).unwrap();
                assert_eq!(a, b, "mismatch in {p}");
            }
        }
    }

    #[test]
    fn signal_shape_matches_physics() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(dir.path(), &small_spec()).unwrap();
        let ds = load_har(dir.path()).unwrap();

        let mut dyn_gyro_var = 0.0;
        let mut dyn_n = 0.0;
        let mut static_gyro_var = 0.0;
        let mut static_n = 0.0;
        let mut static_total_norm = 0.0;
        for s in ds.samples() {
            let gyro_energy: f64 = (3..6)
                .map(|ch| {
                    let row = s.signals.row(ch);
                    let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64
                })
                .sum();
            if s.label <= 3 {
                dyn_gyro_var += gyro_energy;
                dyn_n += 1.0;
            } else {
                static_gyro_var += gyro_energy;
                static_n += 1.0;
                // Mean total-acceleration vector should be near unit length.
                let norm: f64 = (6..9)
                    .map(|ch| {
                        let row = s.signals.row(ch);
                        let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
                        mean * mean
                    })
                    .sum::<f64>()
                    .sqrt();
                static_total_norm += norm;
            }
        }
        let dyn_var = dyn_gyro_var / dyn_n;
        let static_var = static_gyro_var / static_n;
        assert!(
            dyn_var > 10.0 * static_var,
            "dynamic gyro variance {dyn_var} should dwarf static {static_var}"
        );
        let mean_norm = static_total_norm / static_n;
        assert!(
            (0.8..1.2).contains(&mean_norm),
            "static gravity magnitude off: {mean_norm}"
        );
    }

    #[test]
    fn ensure_corpus_reuses_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let s1 = ensure_corpus(dir.path(), &spec).unwrap();
        let probe = dir.path().join("train").join("y_train.txt");
        let before = std::fs::metadata(&probe).unwrap().modified().unwrap();
        let s2 = ensure_corpus(dir.path(), &spec).unwrap();
        let after = std::fs::metadata(&probe).unwrap().modified().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(before, after, "second call should not rewrite files");
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            seed: 1,
            total_windows: 100,
        };
        assert!(generate_corpus(dir.path(), &spec).is_err());
    }
}
