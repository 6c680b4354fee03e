#![allow(dead_code)]

use hlc_core::corpus::{synth_corpus, SynthConfig, Utterance};
use hlc_core::signal::{stft, Signal, StftConfig};

pub const RATE: u32 = 44_100;

/// Sine at `freq` Hz and `level_db` SPL.
pub fn tone(freq: f64, level_db: f64, seconds: f64) -> Signal {
    let n = (seconds * RATE as f64) as usize;
    let amp = std::f64::consts::SQRT_2 * 10f64.powf((level_db - 85.0) / 20.0);
    let x = (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / RATE as f64).sin())
        .collect();
    Signal::new(x, RATE).unwrap()
}

pub fn corpus(count: usize, seed: u64, seconds: f64) -> Vec<Utterance> {
    let cfg = SynthConfig {
        duration_s: seconds,
        ..Default::default()
    };
    synth_corpus(count, seed, &cfg).unwrap()
}

/// Power spectrum averaged over the interior frames.
pub fn mean_power(x: &Signal, cfg: StftConfig) -> Vec<f64> {
    let s = stft(x, cfg).unwrap();
    let (lo, hi) = (4, s.frames() - 4);
    (0..s.bins())
        .map(|b| (lo..hi).map(|f| s.bin(f, b).norm_sqr()).sum::<f64>() / (hi - lo) as f64)
        .collect()
}

/// Contiguous bins around the peak within `db` of it.
pub fn width_below_peak(p: &[f64], db: f64) -> usize {
    let (peak, v) = p
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let floor = v * 10f64.powf(-db / 10.0);
    let mut lo = peak;
    while lo > 0 && p[lo - 1] >= floor {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < p.len() && p[hi + 1] >= floor {
        hi += 1;
    }
    hi - lo + 1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tone whose instantaneous frequency jitters uniformly by `jitter_hz`.
pub fn jittered_tone(freq: f64, jitter_hz: f64, level_db: f64, seconds: f64, seed: u64) -> Signal {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * RATE as f64) as usize;
    let amp = std::f64::consts::SQRT_2 * 10f64.powf((level_db - 85.0) / 20.0);
    let mut phase = 0.0f64;
    let x = (0..n)
        .map(|_| {
            phase += 2.0 * std::f64::consts::PI * (freq + rng.gen_range(-jitter_hz..jitter_hz)) / RATE as f64;
            amp * phase.sin()
        })
        .collect();
    Signal::new(x, RATE).unwrap()
}
