//! Evaluation of compensation conditions over a corpus and audiograms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::dpn::{prescribe, BandLayout, DpnParams, Envelope};
use crate::error::{Error, Result};
use crate::hl::{Audiogram, Components, HlModel};
use crate::metrics::{stoi_thr_with, ReportRow, StoiOptions, ThresholdNoiseSpec};
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    NoCompensation,
    DpnCamfit,
    DpnCamfitSmoothed,
    DpnFt,
    DpnFtEnv,
    DpnFtFilt,
    DpnLi,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::NoCompensation,
        Condition::DpnCamfit,
        Condition::DpnCamfitSmoothed,
        Condition::DpnFt,
        Condition::DpnFtEnv,
        Condition::DpnFtFilt,
        Condition::DpnLi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoCompensation => "no-compensation",
            Condition::DpnCamfit => "dpn-camfit",
            Condition::DpnCamfitSmoothed => "dpn-camfit-smoothed",
            Condition::DpnFt => "dpn-ft",
            Condition::DpnFtEnv => "dpn-ft-env",
            Condition::DpnFtFilt => "dpn-ft-filt",
            Condition::DpnLi => "dpn-li",
        }
    }

    /// Conditions whose parameters come from a training run.
    pub fn is_trained(self) -> bool {
        matches!(
            self,
            Condition::DpnFt | Condition::DpnFtEnv | Condition::DpnFtFilt | Condition::DpnLi
        )
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Condition::ALL.iter().map(|c| c.as_str()).collect();
                Error::param(format!("unknown condition `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Prescription-initialized parameters for `a`.
pub fn camfit_params(layout: &BandLayout, a: &Audiogram) -> Result<DpnParams> {
    let table = prescribe(a, &layout.centers())?;
    DpnParams::from_table(layout.clone(), &table)
}

/// Fitted parameters available to [`evaluate`], keyed by condition and,
/// for listener-dependent fits, audiogram label.
#[derive(Debug, Clone, Default)]
pub struct FittedModels {
    dependent: BTreeMap<(Condition, String), DpnParams>,
    independent: Option<DpnParams>,
}

impl FittedModels {
    pub fn insert(&mut self, condition: Condition, audiogram: &str, params: DpnParams) -> Result<()> {
        if !condition.is_trained() {
            return Err(Error::param(format!("`{condition}` is not a trained condition")));
        }
        if condition == Condition::DpnLi {
            if params.mlp.is_none() {
                return Err(Error::param("dpn-li parameters must contain an mlp"));
            }
            self.independent = Some(params);
        } else {
            self.dependent.insert((condition, audiogram.to_string()), params);
        }
        Ok(())
    }

    /// Parameters for `condition` at `a`; `None` means no processing.
    pub fn params_for(&self, condition: Condition, a: &Audiogram, layout: &BandLayout) -> Result<Option<DpnParams>> {
        let missing = |hint: String| Error::MissingCondition {
            condition: condition.to_string(),
            hint,
        };
        Ok(match condition {
            Condition::NoCompensation => None,
            Condition::DpnCamfit => Some(camfit_params(layout, a)?),
            Condition::DpnCamfitSmoothed => {
                let mut p = camfit_params(layout, a)?;
                p.envelope = Envelope::smoothing();
                Some(p)
            }
            Condition::DpnLi => {
                let p = self
                    .independent
                    .as_ref()
                    .ok_or_else(|| missing("train it first with `hlc fit` in listener-independent mode".into()))?;
                Some(p.resolved(Some(a))?)
            }
            c => Some(
                self.dependent
                    .get(&(c, a.label().to_string()))
                    .cloned()
                    .ok_or_else(|| {
                        missing(format!(
                            "train it first with `hlc fit` (condition {c}) for audiogram `{}`",
                            a.label()
                        ))
                    })?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub noise_offset_db: f64,
    pub seed: u64,
    pub clip: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            noise_offset_db: crate::metrics::DEFAULT_OFFSET_DB,
            seed: 0,
            clip: true,
        }
    }
}

/// Threshold-noise seed of file `index`, independent of condition and audiogram.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// SplitMix64 mix of a base seed and a path of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = splitmix(z ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Compensation (if any) followed by the hearing-loss model.
pub fn listen(model: &HlModel, params: Option<&DpnParams>, x: &Signal, a: &Audiogram) -> Result<Signal> {
    let c = match params {
        Some(p) => p.apply(x, Some(a))?,
        None => x.clone(),
    };
    model.apply(&c, a, Components::FULL)
}

/// Per-file rows followed by one `mean` row for every condition and audiogram.
pub fn evaluate(
    model: &HlModel,
    corpus: &[Utterance],
    audiograms: &[Audiogram],
    conditions: &[Condition],
    fitted: &FittedModels,
    layout: &BandLayout,
    config: &EvalConfig,
) -> Result<Vec<ReportRow>> {
    if corpus.is_empty() {
        return Err(Error::param("evaluation corpus is empty"));
    }
    let mut rows = Vec::new();
    for a in audiograms {
        for &cond in conditions {
            let params = fitted.params_for(cond, a, layout)?;
            let scores = corpus
                .par_iter()
                .enumerate()
                .map(|(i, u)| {
                    let y = listen(model, params.as_ref(), &u.signal, a)?;
                    let spec = ThresholdNoiseSpec {
                        offset_db: config.noise_offset_db,
                        seed: noise_seed(config.seed, i),
                    };
                    stoi_thr_with(&u.signal, &y, &spec, StoiOptions { clip: config.clip })
                })
                .collect::<Result<Vec<f64>>>()?;
            for (u, &s) in corpus.iter().zip(&scores) {
                rows.push(ReportRow {
                    file: u.name.clone(),
                    audiogram: a.label().to_string(),
                    condition: cond.to_string(),
                    stoi_thr: s,
                });
            }
            rows.push(ReportRow {
                file: "mean".into(),
                audiogram: a.label().to_string(),
                condition: cond.to_string(),
                stoi_thr: scores.iter().sum::<f64>() / scores.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// Mean score of `condition` at `audiogram` in a report.
pub fn mean_of(rows: &[ReportRow], condition: Condition, audiogram: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.file == "mean" && r.condition == condition.as_str() && r.audiogram == audiogram)
        .map(|r| r.stoi_thr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
        }
        assert!("dpn".parse::<Condition>().is_err());
    }

    #[test]
    fn missing_fit_names_the_fix() {
        let a = Audiogram::standard("N4").unwrap();
        let err = FittedModels::default()
            .params_for(Condition::DpnFt, &a, &BandLayout::default())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dpn-ft") && msg.contains("hlc fit") && msg.contains("N4"), "{msg}");
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(noise_seed(0, 0), noise_seed(0, 1));
        assert_ne!(noise_seed(0, 1), noise_seed(1, 0));
        assert_eq!(derive_seed(5, &[1, 2]), derive_seed(5, &[1, 2]));
        assert_ne!(derive_seed(5, &[1, 2]), derive_seed(5, &[2, 1]));
    }
}
