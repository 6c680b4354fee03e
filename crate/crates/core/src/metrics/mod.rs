//! Intelligibility and level metrics: STOI, STOI with hearing-threshold
//! noise, and calibrated signal level.

mod noise;
mod stoi;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use noise::{
    band_level_db, map_db, map_table, third_octave_edges, threshold_noise, threshold_noise_filter,
    ThresholdNoiseSpec, DEFAULT_OFFSET_DB, NOISE_FILTER_TAPS,
};
pub use stoi::{
    stoi, stoi_with, StoiOptions, StoiReference, ThirdOctaveBank, BETA_DB, DYN_RANGE_DB, FRAME_LEN, NUM_BANDS,
    N_FFT as STOI_N_FFT, SEGMENT_FRAMES, STOI_RATE,
};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Floor inside the traced logarithm.
const LEVEL_FLOOR: f64 = 1e-300;

/// dB SPL of the RMS; `-inf` for a silent or empty signal.
pub fn level_db(x: &Signal) -> f64 {
    if x.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = x.samples().iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * ms.log10() + x.calibration_db()
}

/// Traced `10 log10(mean x^2) + calibration` of a rank-1 node.
pub fn trace_level_db(tape: &mut Tape, x: Var, calibration_db: f64) -> Result<Var> {
    let n = tape.shape(x)[0] as f64;
    let sq = tape.mul(x, x)?;
    let total = tape.sum(sq)?;
    let ms = tape.scale(total, 1.0 / n)?;
    let ln = tape.log_guarded(ms, LEVEL_FLOOR)?;
    let db = tape.scale(ln, 10.0 / std::f64::consts::LN_10)?;
    tape.add_scalar(db, calibration_db)
}

/// STOI of a processed signal after adding threshold noise, with the
/// reference analysis and the noise computed once.
pub struct ThresholdStoi {
    reference: StoiReference,
    noise: Tensor,
}

impl ThresholdStoi {
    pub fn new(x: &Signal, spec: &ThresholdNoiseSpec, options: StoiOptions) -> Result<Self> {
        let reference = StoiReference::new(x, options)?;
        let noise = threshold_noise(x.len(), x.rate(), spec)?;
        // The noise is defined in SPL; express it in the reference's units.
        let g = 10f64.powf((noise.calibration_db() - x.calibration_db()) / 20.0);
        let noise = Tensor::vector(noise.samples().iter().map(|v| v * g).collect());
        Ok(ThresholdStoi { reference, noise })
    }

    pub fn noise(&self) -> &[f64] {
        self.noise.data()
    }

    pub fn trace(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let n = tape.constant(self.noise.clone());
        let noisy = tape.add(y, n)?;
        self.reference.trace(tape, noisy)
    }

    pub fn score(&self, y: &Signal) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(y.samples().to_vec()));
        let s = self.trace(&mut tape, v)?;
        Ok(tape.value(s).item())
    }
}

/// `stoi(x, y + threshold noise)`.
pub fn stoi_thr(x: &Signal, y: &Signal, spec: &ThresholdNoiseSpec) -> Result<f64> {
    stoi_thr_with(x, y, spec, StoiOptions::default())
}

pub fn stoi_thr_with(x: &Signal, y: &Signal, spec: &ThresholdNoiseSpec, options: StoiOptions) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::param(format!("stoi needs equal lengths, got {} and {}", x.len(), y.len())));
    }
    y.require_rate(x.rate())?;
    ThresholdStoi::new(x, spec, options)?.score(y)
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub file: String,
    pub audiogram: String,
    pub condition: String,
    pub stoi_thr: f64,
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    crate::io::read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MODEL_RATE;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn speechlike(seconds: f64, seed: u64) -> Signal {
        let cfg = crate::corpus::SynthConfig {
            duration_s: seconds,
            ..Default::default()
        };
        crate::corpus::synth_utterance(seed, &cfg).unwrap()
    }

    fn white(n: usize, seed: u64) -> Signal {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..n).map(|_| StandardNormal.sample(&mut rng)).collect(), MODEL_RATE).unwrap()
    }

    #[test]
    fn level_examples() {
        let one = Signal::new(vec![1.0; 100], MODEL_RATE).unwrap();
        assert!((level_db(&one) - 85.0).abs() < 1e-12);
        assert!((level_db(&one.scaled(10.0)) - 105.0).abs() < 1e-12);
        let sine = Signal::new(
            (0..44100).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44100.0).sin()).collect(),
            MODEL_RATE,
        )
        .unwrap();
        assert!((level_db(&sine) - (85.0 - 3.0103)).abs() < 1e-3);
        assert_eq!(level_db(&Signal::zeros(10, MODEL_RATE)), f64::NEG_INFINITY);
    }

    #[test]
    fn traced_level_matches() {
        let x = speechlike(0.2, 1);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(x.samples().to_vec()));
        let l = trace_level_db(&mut tape, v, x.calibration_db()).unwrap();
        assert!((tape.value(l).item() - level_db(&x)).abs() < 1e-9);
    }

    #[test]
    fn self_score_is_one_and_scale_free() {
        let x = speechlike(1.0, 2);
        let s = stoi(&x, &x).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        let a = stoi(&x, &x.scaled(0.01)).unwrap();
        assert!((a - s).abs() < 1e-9);
    }

    #[test]
    fn unrelated_noise_scores_low() {
        let x = speechlike(1.5, 3);
        let y = white(x.len(), 4).scaled(x.rms());
        let plain = stoi_with(&x, &y, StoiOptions { clip: false }).unwrap();
        assert!(plain.abs() < 0.1, "{plain}");
        // Clipping lets the noise follow the reference where its envelope
        // dips, which leaves a positive floor.
        let clipped = stoi(&x, &y).unwrap();
        assert!(clipped > plain && clipped < 0.5, "{clipped}");
    }

    #[test]
    fn sub_threshold_signal_scores_like_noise_alone() {
        let x = speechlike(1.5, 5);
        let spec = ThresholdNoiseSpec::with_seed(0);
        let quiet = x.normalized_to_spl(map_db(1000.0) + 15.0 - 60.0).unwrap();
        assert!(stoi(&x, &quiet).unwrap() > 0.9);
        let masked = stoi_thr(&x, &quiet, &spec).unwrap();
        let noise_only = ThresholdStoi::new(&x, &spec, StoiOptions::default()).unwrap();
        let floor = stoi(&x, &x.with_samples(noise_only.noise().to_vec())).unwrap();
        assert!((masked - floor).abs() < 0.02, "{masked} vs {floor}");
        assert!(stoi_thr(&x, &x, &spec).unwrap() > masked + 0.4);
    }

    #[test]
    fn conversational_speech_is_above_threshold() {
        let spec = ThresholdNoiseSpec::with_seed(1);
        let scores: Vec<f64> = (0..10)
            .map(|seed| {
                let x = speechlike(2.0, seed);
                stoi_thr(&x, &x, &spec).unwrap()
            })
            .collect();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!(mean >= 0.95, "{scores:?}");
    }

    #[test]
    fn noise_never_helps() {
        let spec = ThresholdNoiseSpec::with_seed(2);
        for seed in 0..3 {
            let x = speechlike(1.5, seed);
            for gain in [1.0, 0.1, 0.01] {
                let y = x.scaled(gain);
                assert!(stoi_thr(&x, &y, &spec).unwrap() <= stoi(&x, &y).unwrap() + 1e-6);
            }
        }
    }

    #[test]
    fn threshold_stoi_gradient_matches_differences() {
        use crate::autodiff::{gradcheck, trace_scalar, GradcheckOptions, Step};
        let x = speechlike(0.6, 7);
        let spec = ThresholdNoiseSpec::with_seed(0);
        let metric = ThresholdStoi::new(&x, &spec, StoiOptions::default()).unwrap();
        // Gain per 100 ms block applied to a slightly distorted copy.
        let blocks = 6;
        let block = x.len() / blocks + 1;
        let proc: Vec<f64> = x.samples().iter().enumerate().map(|(i, v)| v * (1.0 + 0.3 * (i as f64 * 0.003).sin())).collect();
        let proc = Tensor::vector(proc);
        let f = |theta: &[f64], grad: bool| {
            trace_scalar(theta, grad, |tape, p| {
                let y = tape.constant(proc.clone());
                let g = tape.expand_last(p, block)?;
                let g = tape.reshape(g, &[blocks * block])?;
                let g = tape.slice_last(g, 0, x.len())?;
                let y = tape.mul(y, g)?;
                let s = metric.trace(tape, y)?;
                let l = trace_level_db(tape, y, x.calibration_db())?;
                let l = tape.scale(l, 1e-3)?;
                tape.add(s, l)
            })
        };
        let theta = vec![1.0, 0.5, 2.0, 0.8, 1.2, 0.3];
        let opts = GradcheckOptions {
            step: Step::Absolute(1e-4),
            tolerance: 1e-3,
            zero_floor: 1e-6,
        };
        let report = gradcheck(f, &theta, &[0, 1, 2, 3, 4, 5], &opts).unwrap();
        assert!(report.passed(), "{:?}", report.checks);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![ReportRow {
            file: "a.wav".into(),
            audiogram: "N4".into(),
            condition: "none".into(),
            stoi_thr: 0.5,
        }];
        write_report(&p, &rows).unwrap();
        assert_eq!(read_report(&p).unwrap(), rows);
    }
}
