//! Power-spectrum smearing that mimics broadened auditory filters.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FramePlan, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::{erb_hz, Signal, StftConfig, MODEL_RATE};

/// Guard added to magnitudes before dividing.
pub const MAGNITUDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmearingSpec {
    /// Widening below the centre frequency.
    pub q_lower: f64,
    /// Widening above the centre frequency.
    pub q_upper: f64,
}

impl Default for SmearingSpec {
    fn default() -> Self {
        SmearingSpec {
            q_lower: 4.0,
            q_upper: 2.0,
        }
    }
}

impl SmearingSpec {
    pub fn identity() -> Self {
        SmearingSpec {
            q_lower: 1.0,
            q_upper: 1.0,
        }
    }
}

/// Row-major `B x B` matrices over the one-sided FFT bins.
#[derive(Debug, Clone)]
pub struct SmearingMatrix {
    spec: SmearingSpec,
    bins: usize,
    normal: Vec<f64>,
    wide: Vec<f64>,
    smear: Vec<f64>,
    plan_cfg: StftConfig,
}

/// Unit-peak filter shapes `(1 + p g) exp(-p g)` with `g = |f - fc| / fc`
/// and `p = 4 fc / (q ERB(fc))` chosen per side. Row 0 (DC) is a unit
/// impulse and DC takes no weight in the other rows.
fn filter_rows(q_lower: f64, q_upper: f64, bins: usize, n_fft: usize, rate: u32) -> Vec<f64> {
    let df = rate as f64 / n_fft as f64;
    let mut m = vec![0.0; bins * bins];
    m[0] = 1.0;
    for i in 1..bins {
        let fc = i as f64 * df;
        let p = 4.0 * fc / erb_hz(fc);
        for j in 1..bins {
            let f = j as f64 * df;
            let q = if f < fc { q_lower } else { q_upper };
            let pg = p / q * (f - fc).abs() / fc;
            m[i * bins + j] = (1.0 + pg) * (-pg).exp();
        }
    }
    m
}

pub fn build_smearing_matrix(spec: SmearingSpec, n_fft: usize, rate: u32) -> Result<SmearingMatrix> {
    if !(spec.q_lower >= 1.0 && spec.q_upper >= 1.0) {
        return Err(Error::param(format!(
            "widening factors must be >= 1, got ({}, {})",
            spec.q_lower, spec.q_upper
        )));
    }
    let bins = n_fft / 2 + 1;
    let normal = filter_rows(1.0, 1.0, bins, n_fft, rate);
    let wide = filter_rows(spec.q_lower, spec.q_upper, bins, n_fft, rate);
    let n = DMatrix::from_row_slice(bins, bins, &normal);
    let w = DMatrix::from_row_slice(bins, bins, &wide);
    let lu = n.lu();
    let mut s = lu.solve(&w).ok_or(Error::Singular("smearing matrix"))?;
    // Unit-area filters: the ERB normalization cancels between the two
    // matrices except for the mean widening.
    s *= 2.0 / (spec.q_lower + spec.q_upper);
    let smear = (0..bins).flat_map(|i| (0..bins).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect();
    let plan_cfg = StftConfig {
        n_fft,
        ..StftConfig::SMEARING
    };
    Ok(SmearingMatrix {
        spec,
        bins,
        normal,
        wide,
        smear,
        plan_cfg,
    })
}

impl SmearingMatrix {
    pub fn default_model() -> Result<Self> {
        build_smearing_matrix(SmearingSpec::default(), StftConfig::SMEARING.n_fft, MODEL_RATE)
    }

    pub fn spec(&self) -> SmearingSpec {
        self.spec
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn wide(&self) -> &[f64] {
        &self.wide
    }

    /// The smearing matrix `S`, row-major.
    pub fn matrix(&self) -> &[f64] {
        &self.smear
    }

    /// `S p` for one power spectrum.
    pub fn apply_power(&self, p: &[f64]) -> Vec<f64> {
        self.smear.chunks(self.bins).map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum()).collect()
    }

    fn transposed(&self) -> Tensor {
        let b = self.bins;
        let data = (0..b * b).map(|k| self.smear[(k % b) * b + k / b]).collect();
        Tensor::new(vec![b, b], data).expect("square matrix")
    }

    /// Traced smearing of a rank-1 signal: STFT, `sqrt(relu(S M^2))` with the
    /// original phase, inverse STFT. Output has the input's length and delay.
    pub fn trace(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.shape(x)[0];
        let pad = self.plan_cfg.head_padding();
        let plan = Arc::new(FramePlan::for_stft(self.plan_cfg, n + pad)?);
        let xp = tape.pad_last(x, pad, 0)?;
        let spec = tape.stft(xp, plan.clone())?;
        let mag = tape.abs_complex_guarded(spec, MAGNITUDE_EPS)?;
        let power = tape.mul(mag, mag)?;
        let st = tape.constant(self.transposed());
        let smeared = tape.matmul(power, st)?;
        let smeared = tape.relu(smeared)?;
        let smeared = tape.sqrt(smeared)?;
        let ratio = tape.div_guarded(smeared, mag, MAGNITUDE_EPS)?;
        let out = tape.complex_scale(spec, ratio)?;
        let y = tape.istft(out, plan)?;
        tape.slice_last(y, pad, n)
    }
}

pub fn apply_smearing(x: &Signal, s: &SmearingMatrix) -> Result<Signal> {
    x.require_rate(MODEL_RATE)?;
    super::eval_traced(x, |tape, v| s.trace(tape, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spec_gives_identity_matrix() {
        let s = build_smearing_matrix(SmearingSpec::identity(), 512, MODEL_RATE).unwrap();
        let b = s.bins();
        for i in 0..b {
            for j in 0..b {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s.matrix()[i * b + j] - expect).abs() <= 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn wide_rows_collect_more_power() {
        let s = SmearingMatrix::default_model().unwrap();
        let b = s.bins();
        for i in 0..b {
            let wn: f64 = s.normal()[i * b..(i + 1) * b].iter().sum();
            let ww: f64 = s.wide()[i * b..(i + 1) * b].iter().sum();
            assert!(ww >= wn - 1e-12, "row {i}");
            let peak = s.wide()[i * b..(i + 1) * b].iter().cloned().fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_bin_spreads() {
        let s = SmearingMatrix::default_model().unwrap();
        let mut p = vec![0.0; s.bins()];
        p[40] = 1.0;
        let y = s.apply_power(&p);
        let peak = y.iter().cloned().fold(0.0, f64::max);
        let width = y.iter().filter(|v| **v >= peak * 0.01).count();
        assert!(width > 1, "support {width}");
    }

    #[test]
    fn linear_in_power() {
        let s = SmearingMatrix::default_model().unwrap();
        let a: Vec<f64> = (0..s.bins()).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let b: Vec<f64> = (0..s.bins()).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = s.apply_power(&sum);
        let (sa, sb) = (s.apply_power(&a), s.apply_power(&b));
        for i in 0..s.bins() {
            assert!((lhs[i] - sa[i] - sb[i]).abs() <= 1e-10 * (1.0 + lhs[i].abs()));
        }
    }

    #[test]
    fn rejects_narrowing() {
        let spec = SmearingSpec {
            q_lower: 0.5,
            q_upper: 1.0,
        };
        assert!(build_smearing_matrix(spec, 512, MODEL_RATE).is_err());
    }
}
