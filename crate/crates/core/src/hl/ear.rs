//! Outer and middle ear transfer function.

use crate::error::Result;
use crate::signal::{convolve, design_fir_freq_sampled, ConvMode, FirFilter, Signal, Window, MODEL_RATE};

/// Tap count of the ear filters (odd, so the delay is an integer).
pub const EAR_FILTER_TAPS: usize = 1001;

const KAISER_BETA: f64 = 4.0;

const SHAW_TABLE: &str = include_str!("../../data/ear_shaw.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarDirection {
    /// Free field to cochlea.
    ToCochlea,
    /// Inverse: the tabulated dB response negated.
    FromCochlea,
}

/// The embedded `(frequency Hz, gain dB)` table.
pub fn ear_table() -> Vec<(f64, f64)> {
    SHAW_TABLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("freq"))
        .filter_map(|l| {
            let (f, g) = l.split_once(',')?;
            Some((f.trim().parse().ok()?, g.trim().parse().ok()?))
        })
        .collect()
}

/// Tabulated gain at `freq`, linear between table points.
pub fn ear_table_gain(freq: f64) -> f64 {
    let t = ear_table();
    match t.iter().position(|(f, _)| *f >= freq) {
        Some(0) => t[0].1,
        Some(j) => {
            let ((f0, g0), (f1, g1)) = (t[j - 1], t[j]);
            g0 + (freq - f0) / (f1 - f0) * (g1 - g0)
        }
        None => t[t.len() - 1].1,
    }
}

pub fn ear_filter_fir(direction: EarDirection, rate: u32) -> Result<FirFilter> {
    let nyquist = rate as f64 / 2.0;
    let sign = match direction {
        EarDirection::ToCochlea => 1.0,
        EarDirection::FromCochlea => -1.0,
    };
    let mut freqs = Vec::new();
    let mut gains = Vec::new();
    for (f, g) in ear_table() {
        if f < nyquist {
            freqs.push(f);
            gains.push(sign * g);
        }
    }
    freqs.push(nyquist);
    gains.push(sign * ear_table_gain(nyquist));
    design_fir_freq_sampled(&freqs, &gains, EAR_FILTER_TAPS, Window::Kaiser(KAISER_BETA), rate)
}

/// Delay-compensated outer/middle ear filtering at the model rate.
pub fn ear_filter(x: &Signal, direction: EarDirection) -> Result<Signal> {
    x.require_rate(MODEL_RATE)?;
    convolve(x, &ear_filter_fir(direction, MODEL_RATE)?, ConvMode::Same)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::freq_response_db;

    #[test]
    fn response_follows_table() {
        let f = ear_filter_fir(EarDirection::ToCochlea, MODEL_RATE).unwrap();
        let g = freq_response_db(f.taps(), MODEL_RATE, 1000.0);
        assert!((g - ear_table_gain(1000.0)).abs() <= 1.0, "1 kHz: {g}");
    }

    #[test]
    fn zero_in_zero_out() {
        let x = Signal::zeros(3000, MODEL_RATE);
        let y = ear_filter(&x, EarDirection::FromCochlea).unwrap();
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cascade_is_near_flat() {
        let to = ear_filter_fir(EarDirection::ToCochlea, MODEL_RATE).unwrap();
        let from = ear_filter_fir(EarDirection::FromCochlea, MODEL_RATE).unwrap();
        let cascade = crate::fft::direct_convolve(to.taps(), from.taps());
        let mut f = 100.0;
        while f <= 16000.0 {
            let db = freq_response_db(&cascade, MODEL_RATE, f);
            assert!(db.abs() <= 1.0, "{f} Hz: {db}");
            f *= 1.05;
        }
    }
}
