//! Speech corpora: WAV directories on disk and a seeded synthetic talker.
//!
//! The synthetic talker is a source-filter model: a glottal pulse train with
//! a declining pitch contour through three formant resonators, interleaved
//! with fricative noise and pauses, under syllabic envelopes.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{wav, Signal, MODEL_RATE};

/// Presentation level of corpus speech, dB SPL.
pub const SPEECH_LEVEL_DB: f64 = 65.0;

/// A named utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub name: String,
    pub signal: Signal,
}

/// Sorted `*.wav` files of a directory, read at the model rate.
pub fn load_dir(dir: &Path, resample: bool) -> Result<Vec<Utterance>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no .wav files"));
    }
    paths
        .iter()
        .map(|p| {
            Ok(Utterance {
                name: p.file_name().unwrap().to_string_lossy().into_owned(),
                signal: wav::read(p, wav::ReadOptions { resample })?,
            })
        })
        .collect()
}

/// Vowel formants `(F1, F2, F3)` in Hz, adult male averages.
const VOWELS: [[f64; 3]; 10] = [
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [520.0, 1190.0, 2390.0],
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [300.0, 870.0, 2240.0],
    [490.0, 1350.0, 1690.0],
];

const NASAL: [f64; 3] = [250.0, 1200.0, 2300.0];
/// Fixed upper formants shared by all voiced sounds.
const UPPER_FORMANTS: [f64; 2] = [3500.0, 4500.0];
const FORMANT_BW: [f64; 5] = [80.0, 100.0, 140.0, 200.0, 250.0];
/// Smoothing time constant of the source amplitudes, seconds.
const AMPLITUDE_TAU: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub level_db: f64,
    /// Level of the recording noise floor relative to the speech, dB.
    pub floor_db: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 2.0,
            level_db: SPEECH_LEVEL_DB,
            floor_db: -45.0,
        }
    }
}

/// Two-pole resonator with unit gain at DC and time-varying coefficients.
#[derive(Default, Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let r = (-PI * bw / rate).exp();
        let c = 2.0 * r * (2.0 * PI * freq / rate).cos();
        let b0 = 1.0 - c + r * r;
        let y = b0 * x + c * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Source amplitudes and filter targets held over one segment.
#[derive(Debug, Clone, Copy)]
struct Segment {
    len: usize,
    voicing: f64,
    noise: f64,
    formants: [f64; 3],
    /// Fraction of the segment spent gliding from the previous formants.
    glide: f64,
    noise_center: f64,
    /// Pitch target relative to the talker's mean.
    pitch: f64,
}

impl Segment {
    fn silent(len: usize, formants: [f64; 3]) -> Self {
        Segment {
            len,
            voicing: 0.0,
            noise: 0.0,
            formants,
            glide: 0.0,
            noise_center: 4000.0,
            pitch: 1.0,
        }
    }
}

/// Words of one to three consonant-vowel syllables with occasional pauses.
fn plan_segments(rng: &mut ChaCha8Rng, total: usize, rate: f64, scale: f64) -> Vec<Segment> {
    let ms = |v: f64| (v * rate / 1000.0) as usize;
    let vowel = |rng: &mut ChaCha8Rng| VOWELS[rng.gen_range(0..VOWELS.len())].map(|f| f * scale);
    let mut prev = vowel(rng);
    let mut out = vec![Segment::silent(ms(rng.gen_range(20.0..60.0)), prev)];
    let mut used = 0;
    while used < total {
        let syllables = rng.gen_range(1..=3);
        for _ in 0..syllables {
            let stress = rng.gen_range(0.45..1.0);
            let pitch = rng.gen_range(0.85..1.2);
            match rng.gen_range(0..4) {
                0 => {}
                1 => out.push(Segment {
                    len: ms(rng.gen_range(60.0..130.0)),
                    noise: rng.gen_range(0.3..0.8),
                    noise_center: rng.gen_range(2500.0..7000.0),
                    ..Segment::silent(0, prev)
                }),
                2 => out.push(Segment {
                    len: ms(rng.gen_range(50.0..90.0)),
                    voicing: 0.35 * stress,
                    formants: NASAL.map(|f| f * scale),
                    glide: 0.3,
                    pitch,
                    ..Segment::silent(0, prev)
                }),
                _ => {
                    out.push(Segment::silent(ms(rng.gen_range(30.0..60.0)), prev));
                    out.push(Segment {
                        len: ms(rng.gen_range(10.0..20.0)),
                        noise: rng.gen_range(0.4..1.0),
                        noise_center: rng.gen_range(1500.0..4000.0),
                        ..Segment::silent(0, prev)
                    });
                }
            }
            let v = vowel(rng);
            out.push(Segment {
                len: ms(rng.gen_range(100.0..250.0)),
                voicing: stress,
                formants: v,
                glide: 0.35,
                pitch,
                ..Segment::silent(0, prev)
            });
            prev = v;
            if rng.gen_bool(0.2) {
                out.push(Segment {
                    len: ms(rng.gen_range(60.0..120.0)),
                    noise: rng.gen_range(0.2..0.6),
                    noise_center: rng.gen_range(3000.0..7000.0),
                    ..Segment::silent(0, prev)
                });
            }
        }
        if rng.gen_bool(0.3) {
            out.push(Segment::silent(ms(rng.gen_range(60.0..180.0)), prev));
        }
        used = out.iter().map(|s| s.len).sum();
    }
    out
}

/// One seeded utterance at the model rate, normalized to the configured
/// level. The seed also picks the talker: male or female pitch and vocal
/// tract length.
pub fn synth_utterance(seed: u64, config: &SynthConfig) -> Result<Signal> {
    if !(config.duration_s > 0.0) {
        return Err(Error::param("duration must be positive"));
    }
    let rate = MODEL_RATE as f64;
    let total = (config.duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let female = rng.gen_bool(0.5);
    let (f0_mean, scale) = if female {
        (rng.gen_range(180.0..240.0), 1.15)
    } else {
        (rng.gen_range(95.0..140.0), 1.0)
    };
    let segments = plan_segments(&mut rng, total, rate, scale);
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let smooth = 1.0 - (-1.0 / (AMPLITUDE_TAU * rate)).exp();

    let mut out = Vec::with_capacity(total + rate as usize);
    let mut vocal: [Resonator; 5] = Default::default();
    let mut fric: [Resonator; 2] = Default::default();
    let (mut tilt, mut radiated) = ([0.0f64; 2], 0.0);
    let (mut phase, mut f0_rel) = (0.0, 1.0);
    let (mut voicing, mut noise) = (0.0, 0.0);
    let mut formants = segments[0].formants;
    for seg in &segments {
        let start = formants;
        let glide_len = (seg.glide * seg.len as f64).max(1.0);
        for i in 0..seg.len {
            let u = (i as f64 / glide_len).min(1.0);
            let w = u * u * (3.0 - 2.0 * u);
            for k in 0..3 {
                formants[k] = start[k] + (seg.formants[k] - start[k]) * w;
            }
            voicing += (seg.voicing - voicing) * smooth;
            noise += (seg.noise - noise) * smooth;
            f0_rel += (seg.pitch - f0_rel) * smooth * 0.1;
            // Declination over the utterance.
            let decl = 1.0 - 0.15 * out.len() as f64 / total as f64;
            phase += f0_mean * f0_rel * decl * (1.0 + jitter.sample(&mut rng)) / rate;
            let mut pulse = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                pulse = 1.0;
            }
            // Glottal roll-off, -12 dB per octave.
            tilt[0] = 0.985 * tilt[0] + pulse;
            tilt[1] = 0.985 * tilt[1] + tilt[0];
            let breath: f64 = StandardNormal.sample(&mut rng);
            let mut y = voicing * (tilt[1] + 0.02 * breath);
            let freqs = [formants[0], formants[1], formants[2], UPPER_FORMANTS[0], UPPER_FORMANTS[1]];
            for (k, r) in vocal.iter_mut().enumerate() {
                y = r.step(y, freqs[k], FORMANT_BW[k], rate);
            }
            // Lip radiation, +6 dB per octave.
            let lip = y - radiated;
            radiated = y;
            let hiss: f64 = StandardNormal.sample(&mut rng);
            let c = seg.noise_center;
            let h = fric[0].step(hiss, c, 0.6 * c, rate);
            let h = fric[1].step(h, 1.1 * c, 0.5 * c, rate);
            out.push(lip + 0.1 * noise * h);
        }
    }
    out.truncate(total);
    out.resize(total, 0.0);
    if config.floor_db.is_finite() {
        let speech_rms = (out.iter().map(|v| v * v).sum::<f64>() / total as f64).sqrt();
        let mut floor = Vec::with_capacity(total);
        let mut lp = 0.0;
        for _ in 0..total {
            let w: f64 = StandardNormal.sample(&mut rng);
            lp = 0.9 * lp + w;
            floor.push(lp);
        }
        let floor_rms = (floor.iter().map(|v| v * v).sum::<f64>() / total as f64).sqrt();
        let g = speech_rms * 10f64.powf(config.floor_db / 20.0) / floor_rms;
        out.iter_mut().zip(&floor).for_each(|(v, f)| *v += g * f);
    }
    Signal::new(out, MODEL_RATE)?.normalized_to_spl(config.level_db)
}

/// `count` utterances with seeds `seed, seed + 1, ...`, named `utt_NNN.wav`.
pub fn synth_corpus(count: usize, seed: u64, config: &SynthConfig) -> Result<Vec<Utterance>> {
    (0..count)
        .map(|i| {
            Ok(Utterance {
                name: format!("utt_{i:03}.wav"),
                signal: synth_utterance(seed + i as u64, config)?,
            })
        })
        .collect()
}

pub fn write_corpus(dir: &Path, utterances: &[Utterance]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for u in utterances {
        wav::write(&dir.join(&u.name), &u.signal)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::level_db;

    #[test]
    fn utterance_is_deterministic_and_calibrated() {
        let cfg = SynthConfig::default();
        let a = synth_utterance(4, &cfg).unwrap();
        let b = synth_utterance(4, &cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.len(), 2 * MODEL_RATE as usize);
        assert!((level_db(&a) - 65.0).abs() < 1e-9);
        assert_ne!(synth_utterance(5, &cfg).unwrap().samples(), a.samples());
    }

    #[test]
    fn has_pauses_and_peaks() {
        let x = synth_utterance(1, &SynthConfig::default()).unwrap();
        let frame = 441;
        let rms: Vec<f64> = x
            .samples()
            .chunks(frame)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let max = rms.iter().cloned().fold(0.0, f64::max);
        let quiet = rms.iter().filter(|r| **r < max * 0.01).count();
        assert!(quiet >= 5, "quiet frames {quiet}");
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            duration_s: 0.3,
            ..Default::default()
        };
        let utts = synth_corpus(3, 0, &cfg).unwrap();
        write_corpus(dir.path(), &utts).unwrap();
        let back = load_dir(dir.path(), false).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].name, "utt_001.wav");
        for (a, b) in utts[2].signal.samples().iter().zip(back[2].signal.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
