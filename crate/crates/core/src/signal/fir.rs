use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FirFilter, Signal};
use crate::error::{Error, Result};
use crate::fft::{self, Kernel};

/// Taper applied to truncated ideal responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
    Kaiser(f64),
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = i as f64;
                match *self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * (2.0 * PI * x / m).cos(),
                    Window::Hamming => 0.54 - 0.46 * (2.0 * PI * x / m).cos(),
                    Window::Kaiser(beta) => {
                        let r = 2.0 * x / m - 1.0;
                        bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
                    }
                }
            })
            .collect()
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Linear-phase FIR from a sampled magnitude response (frequency-sampling /
/// window method). Gains are interpolated linearly in dB between the given
/// points; segments touching a `-inf` dB point are interpolated in linear
/// amplitude instead.
pub fn design_fir_freq_sampled(
    freq_points: &[f64],
    gains_db: &[f64],
    n_taps: usize,
    window: Window,
    rate: u32,
) -> Result<FirFilter> {
    let nyquist = rate as f64 / 2.0;
    if freq_points.len() != gains_db.len() {
        return Err(Error::param(format!(
            "{} frequency points but {} gains",
            freq_points.len(),
            gains_db.len()
        )));
    }
    let spans = freq_points.len() >= 2
        && freq_points[0].abs() < 1e-9
        && (freq_points[freq_points.len() - 1] - nyquist).abs() < 1e-6
        && freq_points.windows(2).all(|w| w[1] > w[0]);
    if !spans {
        return Err(Error::BadFrequencyGrid { nyquist });
    }
    if n_taps < 3 || n_taps % 2 == 0 {
        return Err(Error::param(format!(
            "linear-phase design needs an odd tap count >= 3, got {n_taps}"
        )));
    }
    if gains_db.iter().any(|g| g.is_nan() || *g == f64::INFINITY) {
        return Err(Error::param("gains must be finite or -inf"));
    }

    let n_freqs = 1 + (n_taps - 1).next_power_of_two().max(2);
    let n_fft = 2 * (n_freqs - 1);
    let delay = (n_taps - 1) as f64 / 2.0;
    let mut spec = Vec::with_capacity(n_freqs);
    for k in 0..n_freqs {
        let f = nyquist * k as f64 / (n_freqs - 1) as f64;
        let amp = interp_gain(freq_points, gains_db, f);
        let phase = -PI * delay * f / nyquist;
        spec.push(Complex64::from_polar(amp, phase));
    }
    let full = fft::irfft(&spec, n_fft);
    let win = window.coefficients(n_taps);
    let taps: Vec<f64> = full[..n_taps].iter().zip(&win).map(|(h, w)| h * w).collect();
    FirFilter::new(taps, rate)
}

fn interp_gain(freqs: &[f64], gains_db: &[f64], f: f64) -> f64 {
    let j = match freqs.iter().position(|&p| p >= f) {
        Some(0) => return db_to_amp(gains_db[0]),
        Some(j) => j,
        None => return db_to_amp(gains_db[gains_db.len() - 1]),
    };
    let (f0, f1) = (freqs[j - 1], freqs[j]);
    let (g0, g1) = (gains_db[j - 1], gains_db[j]);
    let u = (f - f0) / (f1 - f0);
    if g0.is_finite() && g1.is_finite() {
        db_to_amp(g0 + u * (g1 - g0))
    } else {
        db_to_amp(g0) * (1.0 - u) + db_to_amp(g1) * u
    }
}

fn db_to_amp(db: f64) -> f64 {
    if db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(db / 20.0)
    }
}

/// Magnitude response in dB of `taps` at `freq` Hz (direct DTFT).
pub fn freq_response_db(taps: &[f64], rate: u32, freq: f64) -> f64 {
    let w = 2.0 * PI * freq / rate as f64;
    let h: Complex64 = taps
        .iter()
        .enumerate()
        .map(|(n, &t)| Complex64::from_polar(t, -w * n as f64))
        .sum();
    20.0 * h.norm().max(1e-300).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Length `len + taps - 1`.
    Full,
    /// Length `len`; the first `(taps - 1) / 2` outputs are dropped so a
    /// linear-phase filter introduces no delay.
    Same,
}

pub fn convolve(x: &Signal, f: &FirFilter, mode: ConvMode) -> Result<Signal> {
    x.require_rate(f.rate())?;
    if x.is_empty() {
        return Ok(x.clone());
    }
    let full = Kernel::new(f.taps().to_vec()).convolve_full(x.samples());
    let out = match mode {
        ConvMode::Full => full,
        ConvMode::Same => {
            let c = f.center();
            full[c..c + x.len()].to_vec()
        }
    };
    Signal::new(out, x.rate()).map(|s| s.with_calibration(x.calibration_db()))
}

/// Hann-windowed sinc low-pass with cutoff `pi / factor`, unit DC gain.
pub fn antialias_fir(factor: usize, n_taps: usize, rate: u32) -> Result<FirFilter> {
    if factor < 1 {
        return Err(Error::param("decimation factor must be >= 1"));
    }
    if n_taps % 2 == 0 {
        return Err(Error::param("anti-alias filter needs an odd tap count"));
    }
    let c = (n_taps - 1) as f64 / 2.0;
    let win = Window::Hann.coefficients(n_taps);
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let x = (n as f64 - c) / factor as f64;
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            sinc * win[n]
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    FirFilter::new(taps, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude response in dB sampled on a fine FFT grid.
    fn fft_response_db(taps: &[f64], n: usize) -> Vec<f64> {
        fft::rfft(taps, n)
            .iter()
            .map(|c| 20.0 * c.norm().max(1e-300).log10())
            .collect()
    }

    #[test]
    fn flat_target_is_a_delayed_impulse() {
        let f = design_fir_freq_sampled(&[0.0, 22050.0], &[0.0, 0.0], 101, Window::Kaiser(4.0), 44100).unwrap();
        for (i, &t) in f.taps().iter().enumerate() {
            let expect = if i == 50 { 1.0 } else { 0.0 };
            assert!((t - expect).abs() <= 1e-3, "tap {i} = {t}");
        }
    }

    #[test]
    fn stopband_above_18k_is_attenuated() {
        let freqs = [0.0, 17500.0, 18000.0, 22050.0];
        let gains = [0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let f = design_fir_freq_sampled(&freqs, &gains, 255, Window::Kaiser(6.0), 44100).unwrap();
        let n = 8192;
        let resp = fft_response_db(f.taps(), n);
        for (k, db) in resp.iter().enumerate() {
            let hz = k as f64 * 44100.0 / n as f64;
            if hz >= 19000.0 {
                assert!(*db <= -40.0, "{hz} Hz: {db} dB");
            }
            if hz <= 16000.0 {
                assert!(db.abs() <= 0.1, "{hz} Hz: {db} dB");
            }
        }
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            design_fir_freq_sampled(&[100.0, 22050.0], &[0.0, 0.0], 11, Window::Hann, 44100),
            Err(Error::BadFrequencyGrid { .. })
        ));
        assert!(design_fir_freq_sampled(&[0.0, 22050.0], &[0.0, 0.0], 10, Window::Hann, 44100).is_err());
    }

    #[test]
    fn design_is_deterministic() {
        let a = design_fir_freq_sampled(&[0.0, 1000.0, 22050.0], &[0.0, 6.0, -3.0], 301, Window::Kaiser(4.0), 44100).unwrap();
        let b = design_fir_freq_sampled(&[0.0, 1000.0, 22050.0], &[0.0, 6.0, -3.0], 301, Window::Kaiser(4.0), 44100).unwrap();
        assert_eq!(a.taps(), b.taps());
    }

    #[test]
    fn convolve_identities() {
        let x = Signal::new((0..500).map(|i| (i as f64 * 0.1).sin()).collect(), 44100).unwrap();
        let id = FirFilter::identity(44100);
        assert_eq!(convolve(&x, &id, ConvMode::Full).unwrap().samples(), x.samples());

        let mut imp = vec![0.0; 10];
        imp[0] = 1.0;
        let taps = FirFilter::new(vec![0.5, -0.25, 0.125], 44100).unwrap();
        let y = convolve(&Signal::new(imp, 44100).unwrap(), &taps, ConvMode::Full).unwrap();
        assert_eq!(&y.samples()[..3], taps.taps());

        let x2 = x.scaled(2.0);
        let f = antialias_fir(10, 101, 44100).unwrap();
        let a = convolve(&x2, &f, ConvMode::Same).unwrap();
        let b = convolve(&x, &f, ConvMode::Same).unwrap();
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert!((u - 2.0 * v).abs() <= 1e-12);
        }

        let other = Signal::new(vec![0.0; 4], 16000).unwrap();
        assert!(matches!(convolve(&other, &f, ConvMode::Full), Err(Error::RateMismatch { .. })));
    }

    #[test]
    fn kaiser_window_edges() {
        let w = Window::Kaiser(4.0).coefficients(11);
        assert!((w[5] - 1.0).abs() < 1e-12);
        assert!((w[0] - 1.0 / bessel_i0(4.0)).abs() < 1e-12);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
    }
}
