use std::f64::consts::PI;

use super::fir::{bessel_i0, convolve, ConvMode};
use super::{FirFilter, Signal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Decimate,
    Upsample,
}

/// Integer-factor rate conversion through an anti-alias FIR.
///
/// Decimation filters then keeps every `factor`-th sample. Upsampling
/// inserts `factor - 1` zeros between samples, filters and scales by
/// `factor`. Both use delay-compensated convolution.
pub fn rate_convert(
    x: &Signal,
    factor: usize,
    aa: &FirFilter,
    direction: Direction,
) -> Result<Signal> {
    if factor < 1 {
        return Err(Error::param("rate conversion factor must be >= 1"));
    }
    match direction {
        Direction::Decimate => {
            if x.rate() as usize % factor != 0 {
                return Err(Error::param(format!(
                    "{} Hz is not divisible by {factor}",
                    x.rate()
                )));
            }
            let y = convolve(x, aa, ConvMode::Same)?;
            let kept = y.samples().iter().step_by(factor).copied().collect();
            Ok(Signal::new(kept, x.rate() / factor as u32)?.with_calibration(x.calibration_db()))
        }
        Direction::Upsample => {
            let up_rate = x.rate() * factor as u32;
            let mut stuffed = vec![0.0; x.len() * factor];
            for (i, &v) in x.samples().iter().enumerate() {
                stuffed[i * factor] = v;
            }
            let s = Signal::new(stuffed, up_rate)?.with_calibration(x.calibration_db());
            Ok(convolve(&s, aa, ConvMode::Same)?.scaled(factor as f64))
        }
    }
}

/// Arbitrary-ratio band-limited resampler stored as a sparse linear map
/// (Kaiser-windowed sinc, one row of weights per output sample).
#[derive(Debug, Clone)]
pub struct Resampler {
    rate_in: u32,
    rate_out: u32,
    len_in: usize,
    starts: Vec<usize>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

const ZERO_CROSSINGS: f64 = 16.0;
const KAISER_BETA: f64 = 8.0;

impl Resampler {
    pub fn new(rate_in: u32, rate_out: u32, len_in: usize) -> Result<Self> {
        if rate_in == 0 || rate_out == 0 {
            return Err(Error::param("resampler rates must be positive"));
        }
        let ratio = rate_out as f64 / rate_in as f64;
        let len_out = if len_in == 0 {
            0
        } else {
            ((len_in - 1) as f64 * ratio).floor() as usize + 1
        };
        // cutoff in cycles per input sample
        let cut = 0.5 * ratio.min(1.0) * 0.9;
        let half_width = ZERO_CROSSINGS / (2.0 * cut);
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut starts = Vec::with_capacity(len_out);
        let mut offsets = Vec::with_capacity(len_out + 1);
        let mut weights = Vec::new();
        offsets.push(0);
        for m in 0..len_out {
            let t = m as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(len_in - 1);
            starts.push(lo);
            let row_start = weights.len();
            for n in lo..=hi {
                let d = n as f64 - t;
                let x = 2.0 * cut * d;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let r = d / half_width;
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                weights.push(2.0 * cut * sinc * win);
            }
            let row = &mut weights[row_start..];
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 {
                row.iter_mut().for_each(|w| *w /= sum);
            }
            offsets.push(weights.len());
        }
        Ok(Resampler {
            rate_in,
            rate_out,
            len_in,
            starts,
            offsets,
            weights,
        })
    }

    pub fn rate_in(&self) -> u32 {
        self.rate_in
    }

    pub fn rate_out(&self) -> u32 {
        self.rate_out
    }

    pub fn len_in(&self) -> usize {
        self.len_in
    }

    pub fn len_out(&self) -> usize {
        self.starts.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len_out())
            .map(|m| {
                let w = &self.weights[self.offsets[m]..self.offsets[m + 1]];
                w.iter()
                    .zip(&x[self.starts[m]..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len_in];
        for (m, &gm) in g.iter().enumerate().take(self.len_out()) {
            let w = &self.weights[self.offsets[m]..self.offsets[m + 1]];
            for (o, a) in out[self.starts[m]..].iter_mut().zip(w) {
                *o += a * gm;
            }
        }
        out
    }

    pub fn resample(&self, x: &Signal) -> Result<Signal> {
        x.require_rate(self.rate_in)?;
        if x.len() != self.len_in {
            return Err(Error::ShapeMismatch {
                op: "resample",
                left: vec![x.len()],
                right: vec![self.len_in],
            });
        }
        Ok(Signal::new(self.apply(x.samples()), self.rate_out)?.with_calibration(x.calibration_db()))
    }
}
