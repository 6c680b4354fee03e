//! Differentiable hearing-loss simulator: outer/middle ear, spectral
//! smearing, loudness recruitment, inverse ear and an 18 kHz low-pass.
//!
//! Every stage is traced on an autodiff [`Tape`]; the plain-signal
//! functions evaluate the same trace without keeping gradients.

mod audiogram;
mod ear;
mod recruitment;
mod smearing;

use std::sync::Arc;

pub use audiogram::{catch_up_exponent, Audiogram, AUDIOGRAM_FREQS, CATCH_UP_DB};
pub use ear::{ear_filter, ear_filter_fir, ear_table, ear_table_gain, EarDirection, EAR_FILTER_TAPS};
pub use recruitment::{
    loudness_recruitment, recombination_gain, EnvelopeCutoff, EnvelopeGradient, RecruitmentBank,
    RecruitmentConfig, RecruitmentTrace, RECOMBINATION_DB,
};
pub use smearing::{apply_smearing, build_smearing_matrix, SmearingMatrix, SmearingSpec, MAGNITUDE_EPS};

use serde::{Deserialize, Serialize};

use crate::autodiff::{FilterBank, Tape, Tensor, Var};
use crate::error::Result;
use crate::signal::{design_fir_freq_sampled, ConvMode, Signal, Window, MODEL_RATE};

const LOWPASS_TAPS: usize = 255;

/// Which impairment stages run between the two ear filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub smearing: bool,
    pub recruitment: bool,
}

impl Components {
    pub const FULL: Components = Components {
        smearing: true,
        recruitment: true,
    };
    pub const SMEARING_ONLY: Components = Components {
        smearing: true,
        recruitment: false,
    };
    pub const RECRUITMENT_ONLY: Components = Components {
        smearing: false,
        recruitment: true,
    };
    pub const NONE: Components = Components {
        smearing: false,
        recruitment: false,
    };
}

impl Default for Components {
    fn default() -> Self {
        Components::FULL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HlConfig {
    pub smearing: SmearingSpec,
    pub recruitment: RecruitmentConfig,
}

/// Filters and matrices of the model, built once and shared read-only.
#[derive(Debug)]
pub struct HlModel {
    ear_to: Arc<FilterBank>,
    ear_from: Arc<FilterBank>,
    lowpass: Arc<FilterBank>,
    smearing: SmearingMatrix,
    recruitment: RecruitmentBank,
}

impl HlModel {
    pub fn new(config: HlConfig) -> Result<Self> {
        let to = ear_filter_fir(EarDirection::ToCochlea, MODEL_RATE)?;
        let from = ear_filter_fir(EarDirection::FromCochlea, MODEL_RATE)?;
        let nyq = MODEL_RATE as f64 / 2.0;
        let lp = design_fir_freq_sampled(
            &[0.0, 17500.0, 18000.0, nyq],
            &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            LOWPASS_TAPS,
            Window::Kaiser(6.0),
            MODEL_RATE,
        )?;
        Ok(HlModel {
            ear_to: Arc::new(FilterBank::single(&to, ConvMode::Same)),
            ear_from: Arc::new(FilterBank::single(&from, ConvMode::Same)),
            lowpass: Arc::new(FilterBank::single(&lp, ConvMode::Same)),
            smearing: build_smearing_matrix(config.smearing, crate::signal::StftConfig::SMEARING.n_fft, MODEL_RATE)?,
            recruitment: RecruitmentBank::new(config.recruitment)?,
        })
    }

    pub fn smearing(&self) -> &SmearingMatrix {
        &self.smearing
    }

    pub fn recruitment(&self) -> &RecruitmentBank {
        &self.recruitment
    }

    /// Traced model on a rank-1 signal at the model rate.
    pub fn trace(&self, tape: &mut Tape, x: Var, a: &Audiogram, components: Components) -> Result<Var> {
        let mut y = tape.conv1d_fixed(x, self.ear_to.clone())?;
        if components.smearing {
            y = self.smearing.trace(tape, y)?;
        }
        if components.recruitment {
            y = self.recruitment.trace(tape, y, a)?;
        }
        let y = tape.conv1d_fixed(y, self.ear_from.clone())?;
        tape.conv1d_fixed(y, self.lowpass.clone())
    }

    pub fn apply(&self, x: &Signal, a: &Audiogram, components: Components) -> Result<Signal> {
        x.require_rate(MODEL_RATE)?;
        // Validates the audiogram even when recruitment is off.
        self.recruitment.expansion_exponents(a)?;
        eval_traced(x, |tape, v| self.trace(tape, v, a, components))
    }
}

/// Convenience wrapper building a default model per call.
pub fn apply_hl(x: &Signal, a: &Audiogram, components: Components) -> Result<Signal> {
    HlModel::new(HlConfig::default())?.apply(x, a, components)
}

/// Runs a traced rank-1 transform on constant input and returns its value.
pub(crate) fn eval_traced<F>(x: &Signal, f: F) -> Result<Signal>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::vector(x.samples().to_vec()));
    let out = f(&mut tape, v)?;
    let samples = tape.value(out).data().to_vec();
    Signal::new(samples, x.rate()).map(|s| s.with_calibration(x.calibration_db()))
}
