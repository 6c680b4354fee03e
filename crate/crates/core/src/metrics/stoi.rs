//! Short-time objective intelligibility on the autodiff tape.
//!
//! Follows the reference algorithm: 10 kHz, silent-frame removal with a
//! 40 dB range, 256-sample frames with 50% overlap, 15 one-third octave
//! bands from 150 Hz, 30-frame segments with normalization and clipping.

use std::sync::Arc;

use crate::autodiff::{FramePlan, LinearOperator, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::{Resampler, Signal};

pub const STOI_RATE: u32 = 10_000;
pub const FRAME_LEN: usize = 256;
pub const N_FFT: usize = 512;
pub const HOP: usize = FRAME_LEN / 2;
pub const NUM_BANDS: usize = 15;
pub const MIN_FREQ: f64 = 150.0;
pub const SEGMENT_FRAMES: usize = 30;
pub const DYN_RANGE_DB: f64 = 40.0;
/// Lower signal-to-distortion bound, dB.
pub const BETA_DB: f64 = -15.0;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoiOptions {
    /// Apply the per-segment clipping at the -15 dB bound.
    pub clip: bool,
}

impl Default for StoiOptions {
    fn default() -> Self {
        StoiOptions { clip: true }
    }
}

/// `hanning(n + 2)[1:-1]`: symmetric Hann without the zero end points.
fn hanning_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// One-third octave band matrix over the one-sided bins.
#[derive(Debug, Clone)]
pub struct ThirdOctaveBank {
    centers: Vec<f64>,
    edges: Vec<(usize, usize)>,
    bins: usize,
}

impl ThirdOctaveBank {
    pub fn new(rate: u32, n_fft: usize, num_bands: usize, min_freq: f64) -> Self {
        let bins = n_fft / 2 + 1;
        let f: Vec<f64> = (0..bins).map(|k| k as f64 * rate as f64 / n_fft as f64).collect();
        let nearest = |target: f64| {
            (0..bins)
                .min_by(|&a, &b| (f[a] - target).powi(2).total_cmp(&(f[b] - target).powi(2)))
                .unwrap()
        };
        let mut centers = Vec::with_capacity(num_bands);
        let mut edges = Vec::with_capacity(num_bands);
        for k in 0..num_bands {
            let kf = k as f64;
            centers.push(min_freq * 2f64.powf(kf / 3.0));
            let lo = min_freq * 2f64.powf((2.0 * kf - 1.0) / 6.0);
            let hi = min_freq * 2f64.powf((2.0 * kf + 1.0) / 6.0);
            edges.push((nearest(lo), nearest(hi)));
        }
        ThirdOctaveBank { centers, edges, bins }
    }

    pub fn standard() -> Self {
        ThirdOctaveBank::new(STOI_RATE, N_FFT, NUM_BANDS, MIN_FREQ)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Half-open bin range of band `j`.
    pub fn bin_range(&self, j: usize) -> (usize, usize) {
        self.edges[j]
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `[bins, bands]` transpose of the 0/1 band matrix.
    fn transposed(&self) -> Tensor {
        let j = self.len();
        let mut m = vec![0.0; self.bins * j];
        for (band, &(lo, hi)) in self.edges.iter().enumerate() {
            for b in lo..hi {
                m[b * j + band] = 1.0;
            }
        }
        Tensor::new(vec![self.bins, j], m).expect("band matrix shape")
    }
}

/// Keeps the frames selected by the reference and overlap-adds them.
#[derive(Debug, Clone)]
struct FrameSelection {
    window: Vec<f64>,
    kept: Vec<usize>,
    in_len: usize,
}

impl FrameSelection {
    fn from_reference(x: &[f64]) -> Self {
        let window = hanning_inner(FRAME_LEN);
        let starts: Vec<usize> = if x.len() >= FRAME_LEN {
            (0..=x.len() - FRAME_LEN).step_by(HOP).collect()
        } else {
            Vec::new()
        };
        let energies: Vec<f64> = starts
            .iter()
            .map(|&s| {
                let e: f64 = window.iter().zip(&x[s..s + FRAME_LEN]).map(|(w, v)| (w * v).powi(2)).sum();
                20.0 * (e.sqrt() + EPS).log10()
            })
            .collect();
        let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kept = starts
            .iter()
            .zip(&energies)
            .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
            .map(|(&s, _)| s)
            .collect();
        FrameSelection {
            window,
            kept,
            in_len: x.len(),
        }
    }
}

impl LinearOperator for FrameSelection {
    fn in_len(&self) -> usize {
        self.in_len
    }

    fn out_len(&self) -> usize {
        if self.kept.is_empty() {
            0
        } else {
            (self.kept.len() - 1) * HOP + FRAME_LEN
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_len()];
        for (k, &s) in self.kept.iter().enumerate() {
            for (n, w) in self.window.iter().enumerate() {
                out[k * HOP + n] += w * x[s + n];
            }
        }
        out
    }

    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_len];
        for (k, &s) in self.kept.iter().enumerate() {
            for (n, w) in self.window.iter().enumerate() {
                out[s + n] += w * g[k * HOP + n];
            }
        }
        out
    }
}

/// Everything derived from the clean reference, ready to score any
/// processed signal of the same length.
pub struct StoiReference {
    resampler: Arc<Resampler>,
    selection: Arc<FrameSelection>,
    plan: Arc<FramePlan>,
    bands: Tensor,
    x_norm: Tensor,
    x_bound: Tensor,
    x_hat: Tensor,
    segments: usize,
    options: StoiOptions,
}

fn frame_count(len: usize) -> usize {
    if len > FRAME_LEN {
        (len - FRAME_LEN).div_ceil(HOP)
    } else {
        0
    }
}

impl StoiReference {
    pub fn new(x: &Signal, options: StoiOptions) -> Result<Self> {
        let resampler = Arc::new(Resampler::new(x.rate(), STOI_RATE, x.len())?);
        let x10 = resampler.apply(x.samples());
        let selection = Arc::new(FrameSelection::from_reference(&x10));
        let xs = selection.apply(&x10);
        let frames = frame_count(xs.len());
        if frames < SEGMENT_FRAMES && frame_count(x10.len()) >= SEGMENT_FRAMES {
            return Err(Error::param(format!(
                "only {frames} active frames remain after silence removal, STOI needs {SEGMENT_FRAMES}"
            )));
        }
        if frames < SEGMENT_FRAMES {
            return Err(Error::InputTooShort {
                len: x.len(),
                needed: ((SEGMENT_FRAMES * HOP + FRAME_LEN) as f64 * x.rate() as f64 / STOI_RATE as f64).ceil()
                    as usize,
            });
        }
        let plan = Arc::new(FramePlan::new(hanning_inner(FRAME_LEN), HOP, N_FFT, frames, xs.len())?);
        let obm = ThirdOctaveBank::standard();
        let bands = obm.transposed();

        // Reference envelopes [T, J], evaluated once.
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(xs));
        let env = band_envelopes(&mut tape, v, &plan, &bands)?;
        let seg = tape.segments(env, SEGMENT_FRAMES)?;
        let seg = tape.value(seg).clone();
        let (m, j) = (seg.shape()[0], seg.shape()[1]);
        let n = SEGMENT_FRAMES;
        let data = seg.data();
        let mut x_norm = vec![0.0; m * j];
        let mut x_bound = vec![0.0; m * j * n];
        let mut x_hat = vec![0.0; m * j * n];
        let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
        for r in 0..m * j {
            let row = &data[r * n..(r + 1) * n];
            x_norm[r] = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mean = row.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..n {
                x_bound[r * n + k] = row[k] * clip;
                x_hat[r * n + k] = centered[k] / (norm + EPS);
            }
        }
        Ok(StoiReference {
            resampler,
            selection,
            plan,
            bands,
            x_norm: Tensor::new(vec![m, j], x_norm)?,
            x_bound: Tensor::new(vec![m, j, n], x_bound)?,
            x_hat: Tensor::new(vec![m, j, n], x_hat)?,
            segments: m,
            options,
        })
    }

    pub fn input_len(&self) -> usize {
        self.resampler.len_in()
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Traced score of a processed signal at the reference's rate and length.
    pub fn trace(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        if tape.shape(y) != [self.input_len()] {
            return Err(Error::ShapeMismatch {
                op: "stoi",
                left: tape.shape(y).to_vec(),
                right: vec![self.input_len()],
            });
        }
        let n = SEGMENT_FRAMES;
        let y10 = tape.linear_map(y, self.resampler.clone())?;
        let ys = tape.linear_map(y10, self.selection.clone())?;
        let env = band_envelopes(tape, ys, &self.plan, &self.bands)?;
        let seg = tape.segments(env, n)?;
        let sq = tape.mul(seg, seg)?;
        let energy = tape.sum_axis(sq, 2)?;
        let y_norm = tape.sqrt(energy)?;
        let x_norm = tape.constant(self.x_norm.clone());
        let gain = tape.div_guarded(x_norm, y_norm, EPS)?;
        let gain = tape.expand_last(gain, n)?;
        let mut y_scaled = tape.mul(seg, gain)?;
        if self.options.clip {
            let bound = tape.constant(self.x_bound.clone());
            y_scaled = tape.minimum(y_scaled, bound)?;
        }
        let mean = tape.mean_axis(y_scaled, 2)?;
        let mean = tape.expand_last(mean, n)?;
        let centered = tape.sub(y_scaled, mean)?;
        let sq = tape.mul(centered, centered)?;
        let energy = tape.sum_axis(sq, 2)?;
        let norm = tape.sqrt(energy)?;
        let norm = tape.expand_last(norm, n)?;
        let y_hat = tape.div_guarded(centered, norm, EPS)?;
        let x_hat = tape.constant(self.x_hat.clone());
        let corr = tape.mul(y_hat, x_hat)?;
        let total = tape.sum(corr)?;
        tape.scale(total, 1.0 / (self.segments * NUM_BANDS) as f64)
    }

    pub fn score(&self, y: &Signal) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(y.samples().to_vec()));
        let s = self.trace(&mut tape, v)?;
        Ok(tape.value(s).item())
    }
}

/// `sqrt(OBM |X|^2)` per frame, `[T, J]`.
fn band_envelopes(tape: &mut Tape, x: Var, plan: &Arc<FramePlan>, bands: &Tensor) -> Result<Var> {
    let spec = tape.stft(x, plan.clone())?;
    let power = tape.abs2_complex(spec)?;
    let m = tape.constant(bands.clone());
    let band_power = tape.matmul(power, m)?;
    tape.sqrt(band_power)
}

/// STOI of `y` against the clean reference `x`.
pub fn stoi(x: &Signal, y: &Signal) -> Result<f64> {
    stoi_with(x, y, StoiOptions::default())
}

pub fn stoi_with(x: &Signal, y: &Signal, options: StoiOptions) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::param(format!("stoi needs equal lengths, got {} and {}", x.len(), y.len())));
    }
    y.require_rate(x.rate())?;
    StoiReference::new(x, options)?.score(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_reproduce_reference_layout() {
        let obm = ThirdOctaveBank::standard();
        assert_eq!(obm.len(), 15);
        assert!((obm.centers()[14] - 3810.0).abs() < 1.0);
        // First band 150 Hz: edges nearest to 133.6 and 168.4 Hz on a 19.5 Hz grid.
        assert_eq!(obm.bin_range(0), (7, 9));
        for j in 1..15 {
            assert!(obm.bin_range(j).0 >= obm.bin_range(j - 1).0);
        }
    }

    #[test]
    fn inner_hanning_matches_definition() {
        let w = hanning_inner(4);
        let full: Vec<f64> = (0..6).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / 5.0).cos()).collect();
        for (a, b) in w.iter().zip(&full[1..5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_selection_adjoint() {
        let x: Vec<f64> = (0..3000).map(|i| ((i as f64) * 0.01).sin() * if i > 1500 { 1e-4 } else { 1.0 }).collect();
        let sel = FrameSelection::from_reference(&x);
        assert!(sel.kept.len() < (3000 - 256) / 128 + 1);
        let u: Vec<f64> = (0..sel.in_len()).map(|i| (i as f64 * 0.37).cos()).collect();
        let v: Vec<f64> = (0..sel.out_len()).map(|i| (i as f64 * 0.11).sin()).collect();
        let lhs: f64 = sel.apply(&u).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(sel.adjoint(&v)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn short_clip_is_an_error() {
        let x = Signal::new((0..4000).map(|i| (i as f64 * 0.05).sin()).collect(), 44100).unwrap();
        assert!(matches!(stoi(&x, &x), Err(Error::InputTooShort { .. })));
    }
}
