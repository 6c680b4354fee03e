//! Gaussian noise shaped to sit a fixed margin above the normal hearing
//! threshold (minimum audible pressure).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::{convolve, design_fir_freq_sampled, ConvMode, FirFilter, Signal, Window, DEFAULT_CALIBRATION_DB};

const MAP_TABLE: &str = include_str!("../../data/map_killion.csv");

pub const NOISE_FILTER_TAPS: usize = 4097;
pub const DEFAULT_OFFSET_DB: f64 = 15.0;

const KAISER_BETA: f64 = 8.0;
/// Design grid density, points per octave.
const GRID_PER_OCTAVE: f64 = 12.0;

/// `(frequency Hz, dB SPL)` points of the embedded threshold curve.
pub fn map_table() -> Vec<(f64, f64)> {
    MAP_TABLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("freq"))
        .filter_map(|l| {
            let (f, g) = l.split_once(',')?;
            Some((f.trim().parse().ok()?, g.trim().parse().ok()?))
        })
        .collect()
}

/// Threshold in dB SPL, linear in log frequency, held constant past the ends.
pub fn map_db(freq: f64) -> f64 {
    let t = map_table();
    let (first, last) = (t[0], t[t.len() - 1]);
    if freq <= first.0 {
        return first.1;
    }
    if freq >= last.0 {
        return last.1;
    }
    let j = t.iter().position(|(f, _)| *f >= freq).unwrap();
    let ((f0, g0), (f1, g1)) = (t[j - 1], t[j]);
    let u = (freq / f0).ln() / (f1 / f0).ln();
    g0 + u * (g1 - g0)
}

/// Edges of the one-third octave band centred on `fc`.
pub fn third_octave_edges(fc: f64) -> (f64, f64) {
    (fc * 2f64.powf(-1.0 / 6.0), fc * 2f64.powf(1.0 / 6.0))
}

/// Segment length of the band-level analyzer.
const ANALYZER_LEN: usize = 8192;

/// Band level in dB SPL of `x` between `lo` and `hi` Hz: Welch estimate
/// with periodic Hann segments at 50% overlap, one segment if `x` is short.
pub fn band_level_db(x: &Signal, lo: f64, hi: f64) -> f64 {
    let seg = ANALYZER_LEN.min(x.len());
    let win = crate::signal::hann_periodic(seg);
    let win_power: f64 = win.iter().map(|w| w * w).sum();
    let df = x.rate() as f64 / seg as f64;
    let mut power = 0.0;
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let frame: Vec<f64> = x.samples()[start..start + seg].iter().zip(&win).map(|(v, w)| v * w).collect();
        let spec = crate::fft::rfft(&frame, seg);
        for (k, c) in spec.iter().enumerate() {
            let f = k as f64 * df;
            if f >= lo && f < hi {
                let w = if k == 0 || 2 * k == seg { 1.0 } else { 2.0 };
                power += w * c.norm_sqr() / (seg as f64 * win_power);
            }
        }
        count += 1;
        start += seg / 2;
    }
    10.0 * (power / count as f64).log10() + x.calibration_db()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdNoiseSpec {
    /// Margin above the threshold curve, dB.
    pub offset_db: f64,
    pub seed: u64,
}

impl Default for ThresholdNoiseSpec {
    fn default() -> Self {
        ThresholdNoiseSpec {
            offset_db: DEFAULT_OFFSET_DB,
            seed: 0,
        }
    }
}

impl ThresholdNoiseSpec {
    pub fn with_seed(seed: u64) -> Self {
        ThresholdNoiseSpec {
            seed,
            ..Default::default()
        }
    }

    /// One-third octave level the noise reaches at 1 kHz.
    pub fn target_1k_db(&self) -> f64 {
        map_db(1000.0) + self.offset_db
    }
}

/// Shaping filter for unit-variance white noise, scaled so the 1 kHz
/// third-octave level equals the target. Density follows the threshold curve
/// minus `10 log10(f / 1 kHz)`, so every third-octave band follows the curve.
pub fn threshold_noise_filter(spec: &ThresholdNoiseSpec, rate: u32) -> Result<FirFilter> {
    let nyquist = rate as f64 / 2.0;
    let density = |f: f64| map_db(f) - 10.0 * (f / 1000.0).log10();
    let f_low = map_table()[0].0;
    // No infrasound: the response falls to zero at DC.
    let mut freqs = vec![0.0];
    let mut gains = vec![f64::NEG_INFINITY];
    let mut f = f_low;
    while f < nyquist {
        freqs.push(f);
        gains.push(density(f));
        f *= 2f64.powf(1.0 / GRID_PER_OCTAVE);
    }
    freqs.push(nyquist);
    gains.push(density(nyquist.min(map_table().last().unwrap().0)));
    let raw = design_fir_freq_sampled(&freqs, &gains, NOISE_FILTER_TAPS, Window::Kaiser(KAISER_BETA), rate)?;

    // Level of white noise through `raw` in the 1 kHz band: (2 / fs) * integral |H|^2 df.
    let (lo, hi) = third_octave_edges(1000.0);
    let steps = 2000;
    let df = (hi - lo) / steps as f64;
    let integral: f64 = (0..steps)
        .map(|i| {
            let f = lo + (i as f64 + 0.5) * df;
            10f64.powf(crate::signal::freq_response_db(raw.taps(), rate, f) / 10.0) * df
        })
        .sum();
    let level = 10.0 * (2.0 * integral / rate as f64).log10() + DEFAULT_CALIBRATION_DB;
    let g = 10f64.powf((spec.target_1k_db() - level) / 20.0);
    FirFilter::new(raw.taps().iter().map(|t| t * g).collect(), rate)
}

/// `n` samples of seeded threshold noise at `rate`, at the default calibration.
pub fn threshold_noise(n: usize, rate: u32, spec: &ThresholdNoiseSpec) -> Result<Signal> {
    let filter = threshold_noise_filter(spec, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Extra samples so the kept span is free of start-up transients.
    let extra = filter.len() - 1;
    let white: Vec<f64> = (0..n + extra).map(|_| StandardNormal.sample(&mut rng)).collect();
    let full = convolve(&Signal::new(white, rate)?, &filter, ConvMode::Full)?;
    Signal::new(full.samples()[extra..extra + n].to_vec(), rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MODEL_RATE;

    #[test]
    fn table_is_embedded() {
        let t = map_table();
        assert_eq!(t.len(), 17);
        assert_eq!(map_db(1000.0), 7.0);
        assert_eq!(map_db(5.0), 70.0);
    }

    #[test]
    fn third_octave_level_at_1k() {
        let spec = ThresholdNoiseSpec::with_seed(3);
        let n = threshold_noise(4 * MODEL_RATE as usize, MODEL_RATE, &spec).unwrap();
        let (lo, hi) = third_octave_edges(1000.0);
        let l = band_level_db(&n, lo, hi);
        assert!((l - 22.0).abs() <= 0.5, "{l}");
    }

    #[test]
    fn same_seed_same_noise() {
        let spec = ThresholdNoiseSpec::with_seed(11);
        let a = threshold_noise(5000, MODEL_RATE, &spec).unwrap();
        let b = threshold_noise(5000, MODEL_RATE, &spec).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = threshold_noise(5000, MODEL_RATE, &ThresholdNoiseSpec::with_seed(12)).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn band_levels_follow_threshold_curve() {
        let spec = ThresholdNoiseSpec::with_seed(5);
        let n = threshold_noise(4 * MODEL_RATE as usize, MODEL_RATE, &spec).unwrap();
        let centers: Vec<f64> = (0..21).map(|k| 100.0 * 2f64.powf(k as f64 / 3.0)).collect();
        let measured: Vec<f64> = centers
            .iter()
            .map(|&fc| {
                let (lo, hi) = third_octave_edges(fc);
                band_level_db(&n, lo, hi)
            })
            .collect();
        let target: Vec<f64> = centers.iter().map(|&fc| map_db(fc) + 15.0).collect();
        let r = pearson(&measured, &target);
        assert!(r >= 0.95, "r = {r}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
