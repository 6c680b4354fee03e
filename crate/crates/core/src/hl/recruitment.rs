//! Loudness recruitment: band-wise envelope expansion over a gammatone bank.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::audiogram::{catch_up_exponent, Audiogram, CATCH_UP_DB};
use crate::autodiff::{FilterBank, RateFilter, Tape, Var};
use crate::error::{Error, Result};
use crate::signal::{
    antialias_fir, butterworth_highpass_ir, elliptic_lowpass_twopass_ir, erb_hz, erb_number, erb_number_to_hz,
    gammatone_ir_aligned, ConvMode, Signal, DEFAULT_CALIBRATION_DB, GAMMATONE_DEFAULT_TAPS, MODEL_RATE,
    TWOPASS_IR_TAPS,
};

/// Recombination gain, 4.24 dB.
pub const RECOMBINATION_DB: f64 = 4.24;

/// -3 dB bandwidth of a normal 4th-order auditory gammatone, in ERB.
const NORMAL_BW_ERB: f64 = 0.887;

/// Mean of a full-wave rectified sinusoid relative to its RMS.
const RECTIFIED_MEAN_PER_RMS: f64 = 2.0 * SQRT_2 / PI;

/// Envelope low-pass cutoff rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeCutoff {
    /// `0.75 min(100 Hz, band bandwidth)`.
    MinBandwidth,
    /// `max(0.75 ERB(fc), 100 Hz)`, capped at a quarter of the envelope rate.
    ErbFloored,
}

/// How gradients treat the clipped envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeGradient {
    /// Zero outside the clip range, identity inside.
    Subgradient,
    /// No gradient flows through the envelope at all.
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecruitmentConfig {
    pub bands: usize,
    pub f_low: f64,
    pub f_high: f64,
    /// Bandwidth relative to a normal auditory filter.
    pub widening: f64,
    pub taps: usize,
    pub decimation: usize,
    /// Highest bands that get the low-side high-pass at `fc / 2`.
    pub highpass_bands: usize,
    pub envelope_cutoff: EnvelopeCutoff,
    pub envelope_gradient: EnvelopeGradient,
}

impl Default for RecruitmentConfig {
    fn default() -> Self {
        RecruitmentConfig {
            bands: 28,
            f_low: 50.0,
            f_high: 16000.0,
            widening: 3.0,
            taps: GAMMATONE_DEFAULT_TAPS,
            decimation: 50,
            highpass_bands: 4,
            envelope_cutoff: EnvelopeCutoff::MinBandwidth,
            envelope_gradient: EnvelopeGradient::Subgradient,
        }
    }
}

#[derive(Debug)]
pub struct RecruitmentBank {
    config: RecruitmentConfig,
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
    cutoffs: Vec<f64>,
    delay: usize,
    bank: Arc<FilterBank>,
    rate_filter: Arc<RateFilter>,
    envelope_lp: Arc<FilterBank>,
    e_max: f64,
    e_floor: f64,
    synthesis_gain: f64,
}

/// Intermediate results of one traced pass.
pub struct RecruitmentTrace {
    /// `[R, N]` band signals.
    pub bands: Var,
    /// `[R, N]` upsampled envelopes before clipping.
    pub envelope: Var,
    /// `[R, N]` expansion gains.
    pub gains: Var,
    /// `[N]` recombined output.
    pub output: Var,
}

/// Every `factor`-th tap around the centre of a symmetric response,
/// rescaled to unit DC gain so a steady envelope passes unchanged.
fn downsample_symmetric(taps: &[f64], factor: usize) -> Vec<f64> {
    let c = (taps.len() - 1) / 2;
    let k = c / factor;
    let mut d: Vec<f64> = (0..=2 * k).map(|i| taps[c + i * factor - k * factor]).collect();
    let dc: f64 = d.iter().sum();
    d.iter_mut().for_each(|v| *v /= dc);
    d
}

impl RecruitmentBank {
    pub fn new(config: RecruitmentConfig) -> Result<Self> {
        let rate = MODEL_RATE;
        let nyquist = rate as f64 / 2.0;
        if config.bands < 2 || !(config.f_low > 0.0 && config.f_low < config.f_high && config.f_high < nyquist) {
            return Err(Error::param("recruitment bank needs >= 2 bands inside (0, Nyquist)"));
        }
        if config.widening <= 0.0 || config.decimation < 1 || config.highpass_bands > config.bands {
            return Err(Error::param("invalid recruitment bank configuration"));
        }
        let (e_lo, e_hi) = (erb_number(config.f_low), erb_number(config.f_high));
        let centers: Vec<f64> = (0..config.bands)
            .map(|i| erb_number_to_hz(e_lo + (e_hi - e_lo) * i as f64 / (config.bands - 1) as f64))
            .collect();
        let bandwidths: Vec<f64> = centers.iter().map(|&f| config.widening * NORMAL_BW_ERB * erb_hz(f)).collect();

        let mut filters = Vec::with_capacity(config.bands);
        for (i, (&fc, &bw)) in centers.iter().zip(&bandwidths).enumerate() {
            let (g, peak) = gammatone_ir_aligned(fc, bw, 4, config.taps, rate)?;
            let mut taps = g.into_taps();
            if i >= config.bands - config.highpass_bands {
                let hp = butterworth_highpass_ir(fc / 2.0, config.taps, rate)?;
                taps = crate::fft::direct_convolve(&taps, hp.taps());
                taps.truncate(config.taps);
            }
            filters.push((taps, peak));
        }
        let delay = filters.iter().map(|(_, p)| *p).max().unwrap_or(0);
        let len = delay + config.taps;
        let kernels: Vec<Vec<f64>> = filters
            .into_iter()
            .map(|(taps, peak)| {
                let mut k = vec![0.0; delay - peak];
                k.extend(taps);
                k.resize(len, 0.0);
                k
            })
            .collect();

        let env_rate = rate as f64 / config.decimation as f64;
        let cutoffs: Vec<f64> = centers
            .iter()
            .zip(&bandwidths)
            .map(|(&fc, &bw)| match config.envelope_cutoff {
                EnvelopeCutoff::MinBandwidth => 0.75 * bw.min(100.0),
                EnvelopeCutoff::ErbFloored => (0.75 * erb_hz(fc)).max(100.0).min(env_rate / 4.0),
            })
            .collect();
        let lp: Vec<Vec<f64>> = cutoffs
            .iter()
            .map(|&fc| {
                elliptic_lowpass_twopass_ir(fc, rate).map(|f| downsample_symmetric(f.taps(), config.decimation))
            })
            .collect::<Result<_>>()?;
        let aa = antialias_fir(config.decimation, TWOPASS_IR_TAPS, rate)?;

        let e_max = 10f64.powf((CATCH_UP_DB - DEFAULT_CALIBRATION_DB) / 20.0);
        let mut bank = RecruitmentBank {
            config,
            centers,
            bandwidths,
            cutoffs,
            delay,
            bank: Arc::new(FilterBank::new(kernels, ConvMode::Full)?),
            rate_filter: Arc::new(RateFilter::new(&aa, config.decimation)?),
            envelope_lp: Arc::new(FilterBank::new(lp, ConvMode::Same)?),
            e_max,
            // 0 dB SPL
            e_floor: 10f64.powf(-DEFAULT_CALIBRATION_DB / 20.0),
            synthesis_gain: 1.0,
        };
        bank.synthesis_gain = bank.unity_synthesis_gain();
        Ok(bank)
    }

    /// Common weight on the summed bands so that `r` times the weighted sum
    /// has unit mean gain (in dB) from 125 Hz to 8 kHz.
    fn unity_synthesis_gain(&self) -> f64 {
        let n = 200;
        let mean_db = (0..n)
            .map(|i| {
                let f = 125.0 * 64f64.powf(i as f64 / (n - 1) as f64);
                20.0 * self.summed_response(f).norm().log10()
            })
            .sum::<f64>()
            / n as f64;
        10f64.powf(-mean_db / 20.0) / recombination_gain()
    }

    pub fn config(&self) -> &RecruitmentConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn envelope_cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Envelope value of a 105 dB SPL sinusoid.
    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn synthesis_gain(&self) -> f64 {
        self.synthesis_gain
    }

    /// Kernel of band `c` including the alignment delay.
    pub fn kernel(&self, c: usize) -> &[f64] {
        self.bank.kernel(c)
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Complex response of the delay-compensated, unweighted band sum at `freq`.
    pub fn summed_response(&self, freq: f64) -> Complex64 {
        let w = 2.0 * PI * freq / MODEL_RATE as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..self.len() {
            for (n, &t) in self.bank.kernel(c).iter().enumerate() {
                acc += Complex64::from_polar(t, -w * (n as f64 - self.delay as f64));
            }
        }
        acc
    }

    /// Magnitude in dB of the full null-audiogram path `r * w * sum_c g_c`.
    pub fn null_response_db(&self, freq: f64) -> f64 {
        20.0 * (self.summed_response(freq).norm() * self.synthesis_gain * recombination_gain()).log10()
    }

    /// Per-band exponents `gamma_c - 1` for the audiogram.
    pub fn expansion_exponents(&self, a: &Audiogram) -> Result<Vec<f64>> {
        self.centers
            .iter()
            .map(|&f| {
                let h = a.at(f);
                catch_up_exponent(h)
                    .map(|g| g - 1.0)
                    .map_err(|_| Error::AudiogramExceedsCatchUp {
                        freq: f,
                        threshold: h,
                        eta: CATCH_UP_DB,
                    })
            })
            .collect()
    }

    pub fn trace(&self, tape: &mut Tape, x: Var, a: &Audiogram) -> Result<Var> {
        Ok(self.trace_parts(tape, x, a)?.output)
    }

    pub fn trace_parts(&self, tape: &mut Tape, x: Var, a: &Audiogram) -> Result<RecruitmentTrace> {
        let exponents = Arc::new(self.expansion_exponents(a)?);
        let n = tape.shape(x)[0];
        let full = tape.conv1d_fixed(x, self.bank.clone())?;
        let bands = tape.slice_last(full, self.delay, n)?;
        let rect = tape.abs(bands)?;
        let rect = tape.scale(rect, 1.0 / RECTIFIED_MEAN_PER_RMS)?;
        let env = tape.strided_conv1d(rect, self.rate_filter.clone())?;
        let env = tape.conv1d_fixed(env, self.envelope_lp.clone())?;
        let mut envelope = tape.zero_stuff_upsample(env, self.rate_filter.clone(), n)?;
        if self.config.envelope_gradient == EnvelopeGradient::Blocked {
            let frozen = tape.value(envelope).clone();
            envelope = tape.constant(frozen);
        }
        let gains = tape.recruit_gain(envelope, exponents, self.e_floor, self.e_max)?;
        let shaped = tape.mul(bands, gains)?;
        let sum = tape.sum_axis(shaped, 0)?;
        let output = tape.scale(sum, recombination_gain() * self.synthesis_gain)?;
        Ok(RecruitmentTrace {
            bands,
            envelope,
            gains,
            output,
        })
    }

    /// Expansion gains `g_c(n)`, one row per band.
    pub fn band_gains(&self, x: &Signal, a: &Audiogram) -> Result<Vec<Vec<f64>>> {
        x.require_rate(MODEL_RATE)?;
        let mut tape = Tape::new();
        let v = tape.constant(crate::autodiff::Tensor::vector(x.samples().to_vec()));
        let parts = self.trace_parts(&mut tape, v, a)?;
        let g = tape.value(parts.gains);
        Ok(g.data().chunks(x.len().max(1)).map(<[f64]>::to_vec).collect())
    }
}

pub fn recombination_gain() -> f64 {
    10f64.powf(RECOMBINATION_DB / 20.0)
}

pub fn loudness_recruitment(x: &Signal, a: &Audiogram, bank: &RecruitmentBank) -> Result<Signal> {
    x.require_rate(MODEL_RATE)?;
    super::eval_traced(x, |tape, v| bank.trace(tape, v, a))
}
