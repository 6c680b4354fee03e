//! Foundational DSP: signals, STFT, FIR design, convolution, auditory filters
//! and rate conversion.

mod filters;
mod fir;
mod resample;
mod stft;
pub mod wav;

pub use filters::{
    butterworth_highpass_ir, elliptic_lowpass_twopass_ir, erb_hz, erb_number, erb_number_to_hz,
    gammatone_ir, gammatone_ir_aligned, gammatone_peak_s, EllipticPrototype, GAMMATONE_DEFAULT_TAPS, TWOPASS_IR_TAPS,
};
pub use fir::{
    antialias_fir, convolve, design_fir_freq_sampled, freq_response_db, ConvMode, Window,
};
pub use resample::{rate_convert, Direction, Resampler};
pub use stft::{hann_periodic, istft, ola_envelope, stft, stft_frame_count, Spectrogram, StftConfig};

use crate::error::{Error, Result};

/// Rate used throughout the hearing-loss and compensation models.
pub const MODEL_RATE: u32 = 44_100;

/// dB SPL that corresponds to an RMS of 1.0.
pub const DEFAULT_CALIBRATION_DB: f64 = 85.0;

/// Time-domain samples with their rate and SPL calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    rate: u32,
    calibration_db: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("sample {i} is not finite")));
        }
        Ok(Signal {
            samples,
            rate,
            calibration_db: DEFAULT_CALIBRATION_DB,
        })
    }

    pub fn zeros(len: usize, rate: u32) -> Self {
        Signal {
            samples: vec![0.0; len],
            rate,
            calibration_db: DEFAULT_CALIBRATION_DB,
        }
    }

    pub fn with_calibration(mut self, calibration_db: f64) -> Self {
        self.calibration_db = calibration_db;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn calibration_db(&self) -> f64 {
        self.calibration_db
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    /// Same rate and calibration, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Signal {
            samples,
            rate: self.rate,
            calibration_db: self.calibration_db,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.with_samples(self.samples.iter().map(|v| v * gain).collect())
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Rescale so the RMS corresponds to `level_db` dB SPL.
    pub fn normalized_to_spl(&self, level_db: f64) -> Result<Self> {
        let rms = self.rms();
        if rms == 0.0 {
            return Err(Error::SilentSignal);
        }
        let target = 10f64.powf((level_db - self.calibration_db) / 20.0);
        Ok(self.scaled(target / rms))
    }

    pub(crate) fn require_rate(&self, rate: u32) -> Result<()> {
        if self.rate != rate {
            return Err(Error::RateMismatch {
                left: self.rate,
                right: rate,
            });
        }
        Ok(())
    }
}

/// FIR filter taps and the rate they were designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    rate: u32,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>, rate: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::param("FIR filter needs at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("FIR taps must be finite"));
        }
        Ok(FirFilter { taps, rate })
    }

    pub fn identity(rate: u32) -> Self {
        FirFilter {
            taps: vec![1.0],
            rate,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples for a linear-phase design.
    pub fn center(&self) -> usize {
        (self.taps.len() - 1) / 2
    }
}
