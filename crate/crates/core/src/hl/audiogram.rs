use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Audiometric frequencies at which thresholds are specified.
pub const AUDIOGRAM_FREQS: [f64; 8] = [250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0];

/// Catch-up level in dB SPL at which impaired and normal loudness meet.
pub const CATCH_UP_DB: f64 = 105.0;

const MAX_THRESHOLD: f64 = 104.0;

const STANDARD: [(&str, &str); 9] = [
    ("N1", include_str!("../../data/audiograms/N1.json")),
    ("N2", include_str!("../../data/audiograms/N2.json")),
    ("N3", include_str!("../../data/audiograms/N3.json")),
    ("N4", include_str!("../../data/audiograms/N4.json")),
    ("N5", include_str!("../../data/audiograms/N5.json")),
    ("N6", include_str!("../../data/audiograms/N6.json")),
    ("S1", include_str!("../../data/audiograms/S1.json")),
    ("S2", include_str!("../../data/audiograms/S2.json")),
    ("S3", include_str!("../../data/audiograms/S3.json")),
];

/// Hearing thresholds in dB HL at [`AUDIOGRAM_FREQS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Audiogram {
    label: String,
    thresholds: [f64; 8],
}

#[derive(Serialize, Deserialize)]
struct AudiogramFile {
    label: String,
    thresholds_db_hl: BTreeMap<String, f64>,
}

impl Audiogram {
    pub fn new(label: impl Into<String>, thresholds: [f64; 8]) -> Result<Self> {
        for (f, &t) in AUDIOGRAM_FREQS.iter().zip(&thresholds) {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::param(format!("threshold at {f} Hz must be finite and >= 0, got {t}")));
            }
            if t > MAX_THRESHOLD {
                return Err(Error::AudiogramExceedsCatchUp {
                    freq: *f,
                    threshold: t,
                    eta: CATCH_UP_DB,
                });
            }
        }
        Ok(Audiogram {
            label: label.into(),
            thresholds,
        })
    }

    pub fn flat(label: impl Into<String>, level: f64) -> Result<Self> {
        Audiogram::new(label, [level; 8])
    }

    /// Normal hearing: 0 dB HL everywhere.
    pub fn normal() -> Self {
        Audiogram {
            label: "normal".into(),
            thresholds: [0.0; 8],
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn thresholds(&self) -> &[f64; 8] {
        &self.thresholds
    }

    /// Every threshold raised by `db`.
    pub fn shifted(&self, db: f64) -> Result<Self> {
        Audiogram::new(format!("{}{:+}", self.label, db), self.thresholds.map(|t| t + db))
    }

    /// Threshold at `freq`, linear in dB over log frequency; held constant
    /// outside 250 Hz to 8 kHz.
    pub fn at(&self, freq: f64) -> f64 {
        let lf = freq.max(AUDIOGRAM_FREQS[0]).min(AUDIOGRAM_FREQS[7]).ln();
        let k = AUDIOGRAM_FREQS.iter().position(|f| f.ln() >= lf).unwrap_or(7).max(1);
        let (f0, f1) = (AUDIOGRAM_FREQS[k - 1].ln(), AUDIOGRAM_FREQS[k].ln());
        let u = ((lf - f0) / (f1 - f0)).clamp(0.0, 1.0);
        self.thresholds[k - 1] + u * (self.thresholds[k] - self.thresholds[k - 1])
    }

    pub fn mean(&self) -> f64 {
        self.thresholds.iter().sum::<f64>() / 8.0
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AudiogramFile = serde_json::from_str(text)?;
        let mut thresholds = [0.0; 8];
        for (slot, f) in thresholds.iter_mut().zip(AUDIOGRAM_FREQS) {
            let key = format!("{}", f as u32);
            *slot = *file
                .thresholds_db_hl
                .get(&key)
                .ok_or_else(|| Error::param(format!("audiogram `{}` has no threshold at {key} Hz", file.label)))?;
        }
        if file.thresholds_db_hl.len() != 8 {
            return Err(Error::param(format!(
                "audiogram `{}` lists {} frequencies, expected {:?}",
                file.label,
                file.thresholds_db_hl.len(),
                AUDIOGRAM_FREQS
            )));
        }
        Audiogram::new(file.label, thresholds)
    }

    pub fn to_json(&self) -> String {
        let file = AudiogramFile {
            label: self.label.clone(),
            thresholds_db_hl: AUDIOGRAM_FREQS
                .iter()
                .zip(&self.thresholds)
                .map(|(f, t)| (format!("{}", *f as u32), *t))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("audiogram serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Audiogram::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// One of the shipped standard audiograms (`N1`..`N6`, `S1`..`S3`).
    pub fn standard(name: &str) -> Result<Self> {
        STANDARD
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, text)| Audiogram::from_json(text))
            .unwrap_or_else(|| Err(Error::param(format!("unknown standard audiogram `{name}`"))))
    }

    pub fn standard_all() -> Vec<Audiogram> {
        STANDARD
            .iter()
            .map(|(_, text)| Audiogram::from_json(text).expect("shipped audiograms are valid"))
            .collect()
    }

    /// A standard name, `flat:<dB HL>`, or a JSON file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        if let Some(level) = spec.strip_prefix("flat:") {
            let level: f64 = level
                .parse()
                .map_err(|_| Error::param(format!("bad flat audiogram level `{level}`")))?;
            return Audiogram::flat(format!("flat{level}"), level);
        }
        Audiogram::standard(spec).or_else(|_| Audiogram::read(Path::new(spec)))
    }
}

/// Expansion exponent `eta / (eta - h)`.
pub fn catch_up_exponent(threshold: f64) -> Result<f64> {
    if threshold >= CATCH_UP_DB {
        return Err(Error::AudiogramExceedsCatchUp {
            freq: f64::NAN,
            threshold,
            eta: CATCH_UP_DB,
        });
    }
    Ok(CATCH_UP_DB / (CATCH_UP_DB - threshold))
}
