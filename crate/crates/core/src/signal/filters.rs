//! Auditory and envelope filters: gammatone, Butterworth high-pass and the
//! zero-phase elliptic envelope low-pass.

use std::f64::consts::{PI, SQRT_2};

use rustfft::num_complex::Complex64;

use super::FirFilter;
use crate::error::{Error, Result};
use crate::fft;

pub const GAMMATONE_DEFAULT_TAPS: usize = 2000;

/// Length of the zero-phase envelope low-pass impulse response (symmetric,
/// centered on tap 830).
pub const TWOPASS_IR_TAPS: usize = 1661;

/// Equivalent rectangular bandwidth (Glasberg & Moore) in Hz.
pub fn erb_hz(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

pub fn erb_number(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

pub fn erb_number_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Sampled gammatone envelope `t^(n-1) exp(-2 pi b t) cos(2 pi fc t)`,
/// scaled to unit gain at `fc`.
///
/// `bandwidth` is the -3 dB bandwidth in Hz; the decay parameter `b` is
/// derived from it for the given order.
pub fn gammatone_ir(
    fc: f64,
    bandwidth: f64,
    order: u32,
    n_samples: usize,
    rate: u32,
) -> Result<FirFilter> {
    gammatone(fc, bandwidth, order, n_samples, rate, 0.0)
}

/// Gammatone whose carrier phase is zero at the envelope peak, so that
/// filters with different bandwidths can be time-aligned on that peak.
/// Returns the filter and the peak position in samples.
pub fn gammatone_ir_aligned(
    fc: f64,
    bandwidth: f64,
    order: u32,
    n_samples: usize,
    rate: u32,
) -> Result<(FirFilter, usize)> {
    let peak = gammatone_peak_s(bandwidth, order) * rate as f64;
    let delay = peak.round();
    let g = gammatone(fc, bandwidth, order, n_samples, rate, delay / rate as f64)?;
    Ok((g, delay as usize))
}

/// Time of the envelope maximum, `(n - 1) / (2 pi b)`.
pub fn gammatone_peak_s(bandwidth: f64, order: u32) -> f64 {
    (order as f64 - 1.0) / (2.0 * PI * gammatone_decay(bandwidth, order))
}

fn gammatone_decay(bandwidth: f64, order: u32) -> f64 {
    bandwidth / (2.0 * (2f64.powf(1.0 / order as f64) - 1.0).sqrt())
}

fn gammatone(fc: f64, bandwidth: f64, order: u32, n_samples: usize, rate: u32, t0: f64) -> Result<FirFilter> {
    let nyquist = rate as f64 / 2.0;
    if !(fc > 0.0 && fc < nyquist) {
        return Err(Error::param(format!(
            "gammatone centre {fc} Hz must lie in (0, {nyquist})"
        )));
    }
    if bandwidth <= 0.0 || order == 0 || n_samples == 0 {
        return Err(Error::param("gammatone bandwidth, order and length must be positive"));
    }
    let b = gammatone_decay(bandwidth, order);
    let dt = 1.0 / rate as f64;
    let mut taps: Vec<f64> = (0..n_samples)
        .map(|n| {
            let t = n as f64 * dt;
            t.powi(order as i32 - 1) * (-2.0 * PI * b * t).exp() * (2.0 * PI * fc * (t - t0)).cos()
        })
        .collect();
    let w = 2.0 * PI * fc * dt;
    let h: Complex64 = taps
        .iter()
        .enumerate()
        .map(|(n, &v)| Complex64::from_polar(v, -w * n as f64))
        .sum();
    let g = h.norm();
    taps.iter_mut().for_each(|v| *v /= g);
    FirFilter::new(taps, rate)
}

/// Second-order section with `a[0] == 1`.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 3],
}

impl Biquad {
    /// Bilinear transform of `(b2 s^2 + b1 s + b0) / (a2 s^2 + a1 s + a0)`.
    fn bilinear(num: [f64; 3], den: [f64; 3], rate: f64) -> Self {
        let k = 2.0 * rate;
        let k2 = k * k;
        let map = |c: [f64; 3]| {
            let [c2, c1, c0] = c;
            [
                c2 * k2 + c1 * k + c0,
                2.0 * (c0 - c2 * k2),
                c2 * k2 - c1 * k + c0,
            ]
        };
        let b = map(num);
        let a = map(den);
        Biquad {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [1.0, a[1] / a[0], a[2] / a[0]],
        }
    }

    fn impulse_response(&self, n: usize) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        (0..n)
            .map(|i| {
                let x = if i == 0 { 1.0 } else { 0.0 };
                let y = self.b[0] * x + self.b[1] * x1 + self.b[2] * x2
                    - self.a[1] * y1
                    - self.a[2] * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

fn prewarp(fc: f64, rate: f64) -> f64 {
    2.0 * rate * (PI * fc / rate).tan()
}

/// Truncated impulse response of a 2nd-order Butterworth high-pass.
pub fn butterworth_highpass_ir(fc: f64, n_taps: usize, rate: u32) -> Result<FirFilter> {
    let fs = rate as f64;
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::param(format!("high-pass cutoff {fc} Hz out of range")));
    }
    let wc = prewarp(fc, fs);
    let bq = Biquad::bilinear([1.0, 0.0, 0.0], [1.0, SQRT_2 * wc, wc * wc], fs);
    FirFilter::new(bq.impulse_response(n_taps), rate)
}

/// Analog 2nd-order elliptic low-pass prototype.
#[derive(Debug, Clone, Copy)]
pub struct EllipticPrototype {
    pub passband_ripple_db: f64,
    pub stopband_atten_db: f64,
}

impl Default for EllipticPrototype {
    fn default() -> Self {
        EllipticPrototype {
            passband_ripple_db: 0.25,
            stopband_atten_db: 35.0,
        }
    }
}

impl EllipticPrototype {
    fn eps_pass(&self) -> f64 {
        (10f64.powf(self.passband_ripple_db / 10.0) - 1.0).sqrt()
    }

    /// Gain at DC; even-order elliptic filters start at the bottom of the
    /// passband ripple.
    pub fn dc_gain(&self) -> f64 {
        1.0 / (1.0 + self.eps_pass().powi(2)).sqrt()
    }

    /// Stopband edge over passband edge: the selectivity `xi` at which the
    /// degree-2 elliptic rational function reaches the required discrimination.
    pub fn selectivity(&self) -> f64 {
        let eps_s = (10f64.powf(self.stopband_atten_db / 10.0) - 1.0).sqrt();
        let target = eps_s / self.eps_pass();
        let disc = |xi: f64| {
            let t = (1.0 - 1.0 / (xi * xi)).sqrt();
            ((t + 1.0) * xi * xi - 1.0) / ((t - 1.0) * xi * xi + 1.0)
        };
        let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
        while disc(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if disc(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Numerator and denominator (highest power first) for passband edge `wp` rad/s.
    pub fn analog(&self, wp: f64) -> ([f64; 3], [f64; 3]) {
        let xi = self.selectivity();
        let t = (1.0 - 1.0 / (xi * xi)).sqrt();
        let eps = self.eps_pass();
        // Zeros of 1 + eps^2 R^2 with R = j/eps; u = (omega/wp)^2.
        let r = Complex64::new(0.0, 1.0 / eps);
        let u = (1.0 + r) / (Complex64::new(t + 1.0, 0.0) - r * (t - 1.0));
        let mut p = (-u).sqrt() * wp;
        if p.re > 0.0 {
            p = -p;
        }
        let wz2 = wp * wp / (1.0 - t);
        let p2 = p.norm_sqr();
        let k = p2 / (wz2 * (1.0 + eps * eps).sqrt());
        ([k, 0.0, k * wz2], [1.0, -2.0 * p.re, p2])
    }

    pub fn analog_response(&self, wp: f64, w: f64) -> f64 {
        let (num, den) = self.analog(wp);
        let s = Complex64::new(0.0, w);
        let n = num[0] * s * s + num[1] * s + num[2];
        let d = den[0] * s * s + den[1] * s + den[2];
        (n / d).norm()
    }
}

/// Zero-phase envelope low-pass: the 2nd-order elliptic filter (0.25 dB
/// ripple, 35 dB stopband) applied forward and backward to a unit impulse,
/// centered in [`TWOPASS_IR_TAPS`] samples.
pub fn elliptic_lowpass_twopass_ir(fc: f64, rate: u32) -> Result<FirFilter> {
    let fs = rate as f64;
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::param(format!("elliptic cutoff {fc} Hz out of range")));
    }
    let proto = EllipticPrototype::default();
    let (num, den) = proto.analog(prewarp(fc, fs));
    let bq = Biquad::bilinear(num, den, fs);
    // Forward then reversed filtering of a centered delta equals the
    // autocorrelation of the single-pass impulse response.
    let long = 16 * TWOPASS_IR_TAPS;
    let h = bq.impulse_response(long);
    let n = fft::next_fft_len(2 * long);
    let spec: Vec<Complex64> = fft::rfft(&h, n)
        .iter()
        .map(|c| Complex64::new(c.norm_sqr(), 0.0))
        .collect();
    let r = fft::irfft(&spec, n);
    let half = TWOPASS_IR_TAPS / 2;
    let taps = (0..TWOPASS_IR_TAPS)
        .map(|i| {
            let lag = (i as isize - half as isize).unsigned_abs();
            r[lag]
        })
        .collect();
    FirFilter::new(taps, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response_db(taps: &[f64], n: usize) -> Vec<f64> {
        fft::rfft(taps, n).iter().map(|c| 20.0 * c.norm().max(1e-300).log10()).collect()
    }

    #[test]
    fn gammatone_unit_gain_at_centre_and_width() {
        for (fc, bw) in [(500.0, 80.0), (1000.0, 133.0), (4000.0, 456.0)] {
            let g = gammatone_ir(fc, bw, 4, 2000, 44100).unwrap();
            let n = 1 << 18;
            let resp = response_db(g.taps(), n);
            let df = 44100.0 / n as f64;
            let at_fc = resp[(fc / df).round() as usize];
            assert!(at_fc.abs() <= 0.1, "fc {fc}: {at_fc}");
            let k0 = (fc / df).round() as usize;
            let mut lo = k0;
            while resp[lo] > -3.0103 {
                lo -= 1;
            }
            let mut hi = k0;
            while resp[hi] > -3.0103 {
                hi += 1;
            }
            let width = (hi - lo) as f64 * df;
            assert!((width - bw).abs() <= 0.1 * bw, "fc {fc}: width {width}");
            assert!((lo as f64 * df) < fc && (hi as f64 * df) > fc);
        }
    }

    #[test]
    fn gammatone_truncation_keeps_energy() {
        for fc in [100.0, 300.0, 2000.0] {
            let bw = erb_hz(fc) * 0.887 * 1.019;
            let short = gammatone_ir(fc, bw, 4, 2000, 44100).unwrap();
            let long = gammatone_ir(fc, bw, 4, 40_000, 44100).unwrap();
            // identical up to normalization over the first 2000 samples
            let scale = short.taps()[100] / long.taps()[100];
            let tail: f64 = long.taps()[2000..].iter().map(|v| (v * scale).powi(2)).sum();
            let total: f64 = long.taps().iter().map(|v| (v * scale).powi(2)).sum();
            assert!(tail / total < 0.01, "fc {fc}: {}", tail / total);
        }
    }

    #[test]
    fn gammatone_rejects_nyquist() {
        assert!(gammatone_ir(22050.0, 100.0, 4, 2000, 44100).is_err());
    }

    #[test]
    fn elliptic_prototype_meets_ripple_spec() {
        let p = EllipticPrototype::default();
        let wp = 1.0;
        let edge = p.analog_response(wp, wp);
        assert!((20.0 * edge.log10() + 0.25).abs() < 1e-9);
        assert!((p.analog_response(wp, 0.0) - p.dc_gain()).abs() < 1e-12);
        // passband never exceeds unity
        for i in 0..100 {
            let w = i as f64 / 100.0;
            assert!(p.analog_response(wp, w) <= 1.0 + 1e-12);
        }
        let xi = p.selectivity();
        for i in 0..100 {
            let w = xi * (1.0 + i as f64 * 0.2);
            assert!(20.0 * p.analog_response(wp, w).log10() <= -35.0 + 1e-9);
        }
    }

    #[test]
    fn twopass_is_symmetric_with_expected_gain() {
        let fc = 75.0;
        let f = elliptic_lowpass_twopass_ir(fc, 44100).unwrap();
        let t = f.taps();
        assert_eq!(t.len(), TWOPASS_IR_TAPS);
        for i in 0..t.len() {
            assert!((t[i] - t[t.len() - 1 - i]).abs() <= 1e-9);
        }
        let dc: f64 = t.iter().sum();
        let single = EllipticPrototype::default().dc_gain();
        assert!((dc - single * single).abs() < 1e-3, "dc {dc}");
        assert!((dc - 1.0).abs() <= 0.06);
        // A degree-2 elliptic design only reaches its stopband at xi * fc
        // (about 7.6 fc for these ripples); both passes together give 70 dB there
        // before truncation, and the 1661-tap window costs up to 2 dB of that.
        let n = 1 << 17;
        let resp = response_db(t, n);
        let df = 44100.0 / n as f64;
        let xi = EllipticPrototype::default().selectivity();
        let edge = (xi * fc / df).ceil() as usize;
        for (k, db) in resp.iter().enumerate().skip(edge).take(2000) {
            assert!(*db <= -68.0, "{} Hz: {db}", k as f64 * df);
        }
    }

    #[test]
    fn butterworth_highpass_blocks_dc() {
        let f = butterworth_highpass_ir(2000.0, 2000, 44100).unwrap();
        let dc: f64 = f.taps().iter().sum();
        assert!(dc.abs() < 1e-6);
        let n = 1 << 14;
        let resp = response_db(f.taps(), n);
        let k = (2000.0 * n as f64 / 44100.0).round() as usize;
        assert!((resp[k] + 3.0103).abs() < 0.1);
    }
}
