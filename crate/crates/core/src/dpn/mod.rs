//! Dynamic processing network: STFT-domain multi-band compressor whose
//! level-to-gain curves are piecewise linear in band RMS.
//!
//! Analysis bands are rows of a matrix `F` over STFT bins. Each frame's band
//! RMS `J` passes an optional envelope processor, is mapped to a dB gain by
//! `G = z + sum_i a_i relu(J - l_i)`, spread back to bins through `F` and
//! applied to the complex spectrum.

mod camfit;
mod mlp;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use camfit::{camfit_init, camfit_init_standard, piecewise_gain_at, prescribe, GainTable, PiecewiseInit};
pub use mlp::{AudiogramMlp, DEFAULT_HIDDEN, INPUT_SCALE};

use crate::autodiff::{FramePlan, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hl::Audiogram;
use crate::signal::{hann_periodic, Signal, StftConfig, DEFAULT_CALIBRATION_DB, MODEL_RATE};

pub const PARAMS_VERSION: u32 = 1;
/// Breakpoint levels run from this value upwards in 1 dB steps.
pub const LOWEST_LEVEL_DB: f64 = -10.0;
pub const BREAKPOINT_COUNT: usize = 122;
/// Number of slopes per band.
pub const SEGMENTS: usize = BREAKPOINT_COUNT - 1;
/// Gains are limited to 10^4 (80 dB).
pub const MAX_GAIN_DB: f64 = 80.0;
pub const DEFAULT_BANDS: usize = 8;
pub const DEFAULT_LOW_EDGE_HZ: f64 = 125.0;
pub const DEFAULT_HIGH_EDGE_HZ: f64 = 8000.0;
pub const DEFAULT_ATTACK_MS: f64 = 10.0;
pub const DEFAULT_RELEASE_MS: f64 = 100.0;

pub const STFT: StftConfig = StftConfig::COMPENSATION;

/// Linear RMS of a level in dB SPL under the default calibration.
pub fn level_to_rms(level_db: f64) -> f64 {
    10f64.powf((level_db - DEFAULT_CALIBRATION_DB) / 20.0)
}

pub fn rms_to_level(rms: f64) -> f64 {
    20.0 * rms.log10() + DEFAULT_CALIBRATION_DB
}

/// `-10, -9, ..., 111` dB SPL.
pub fn breakpoint_levels_db() -> Vec<f64> {
    (0..BREAKPOINT_COUNT).map(|j| LOWEST_LEVEL_DB + j as f64).collect()
}

/// Breakpoint RMS values `l_0..l_121`.
pub fn breakpoints() -> Vec<f64> {
    breakpoint_levels_db().into_iter().map(level_to_rms).collect()
}

/// The knots used by the gain curve: `l_0..l_120`.
fn knots() -> Arc<Vec<f64>> {
    let mut l = breakpoints();
    l.pop();
    Arc::new(l)
}

/// Band edges: band `c` spans `edges[c]..edges[c + 1]`, the last band runs
/// to Nyquist and bins below `edges[0]` join band 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandLayout {
    pub edges_hz: Vec<f64>,
}

impl Default for BandLayout {
    fn default() -> Self {
        BandLayout::log_spaced(DEFAULT_LOW_EDGE_HZ, DEFAULT_HIGH_EDGE_HZ, DEFAULT_BANDS).unwrap()
    }
}

impl BandLayout {
    /// `bands - 1` log-spaced bands from `low` to `high` plus one band above `high`.
    pub fn log_spaced(low: f64, high: f64, bands: usize) -> Result<Self> {
        if bands < 2 || !(low > 0.0 && high > low) {
            return Err(Error::param("band layout needs at least 2 bands and 0 < low < high"));
        }
        let ratio = high / low;
        let n = (bands - 1) as f64;
        let edges_hz = (0..bands).map(|k| low * ratio.powf(k as f64 / n)).collect();
        BandLayout::new(edges_hz)
    }

    pub fn new(edges_hz: Vec<f64>) -> Result<Self> {
        let nyquist = MODEL_RATE as f64 / 2.0;
        if edges_hz.is_empty()
            || !edges_hz.windows(2).all(|w| w[1] > w[0])
            || edges_hz[0] <= 0.0
            || edges_hz[edges_hz.len() - 1] >= nyquist
        {
            return Err(Error::param("band edges must increase strictly within (0, Nyquist)"));
        }
        let layout = BandLayout { edges_hz };
        if layout.partition_rows().iter().any(|bins| bins.is_empty()) {
            return Err(Error::param("every band must contain at least one STFT bin"));
        }
        Ok(layout)
    }

    pub fn bands(&self) -> usize {
        self.edges_hz.len()
    }

    /// Geometric band centres; the top band uses Nyquist as its upper edge.
    pub fn centers(&self) -> Vec<f64> {
        let nyquist = MODEL_RATE as f64 / 2.0;
        (0..self.bands())
            .map(|c| {
                let hi = self.edges_hz.get(c + 1).copied().unwrap_or(nyquist);
                (self.edges_hz[c] * hi).sqrt()
            })
            .collect()
    }

    pub fn band_of_bin(&self, bin: usize) -> usize {
        let f = bin as f64 * MODEL_RATE as f64 / STFT.n_fft as f64;
        self.edges_hz.iter().rposition(|&e| f >= e).unwrap_or(0)
    }

    fn partition_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.bands()];
        for b in 0..STFT.bins() {
            rows[self.band_of_bin(b)].push(b);
        }
        rows
    }

    /// 0/1 partition matrix `[C, B]`, row-major.
    pub fn partition(&self) -> Vec<f64> {
        let bins = STFT.bins();
        let mut f = vec![0.0; self.bands() * bins];
        for b in 0..bins {
            f[self.band_of_bin(b) * bins + b] = 1.0;
        }
        f
    }

    /// Thresholds of `a` at the band centres.
    pub fn thresholds(&self, a: &Audiogram) -> Vec<f64> {
        self.centers().iter().map(|&f| a.at(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    None,
    /// Causal per-band FIR over frames, `taps[k][c]`.
    Fir { taps: Vec<Vec<f64>> },
    AttackRelease { attack_ms: f64, release_ms: f64 },
}

impl Envelope {
    /// `w(0) = 1`, all later taps zero.
    pub fn fir_identity(taps: usize, bands: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::param("envelope filter needs at least one tap"));
        }
        let mut t = vec![vec![0.0; bands]; taps];
        t[0].fill(1.0);
        Ok(Envelope::Fir { taps: t })
    }

    pub fn smoothing() -> Self {
        Envelope::AttackRelease {
            attack_ms: DEFAULT_ATTACK_MS,
            release_ms: DEFAULT_RELEASE_MS,
        }
    }

    fn fir_len(&self) -> usize {
        match self {
            Envelope::Fir { taps } => taps.len() * taps.first().map_or(0, Vec::len),
            _ => 0,
        }
    }

    fn validate(&self, bands: usize) -> Result<()> {
        match self {
            Envelope::None => Ok(()),
            Envelope::Fir { taps } => {
                if taps.is_empty() || taps.iter().any(|r| r.len() != bands) {
                    return Err(Error::param(format!("envelope taps must be K rows of {bands} bands")));
                }
                if taps.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::param("envelope taps must be finite"));
                }
                Ok(())
            }
            Envelope::AttackRelease { attack_ms, release_ms } => {
                if !(*attack_ms > 0.0 && attack_ms.is_finite() && *release_ms > 0.0 && release_ms.is_finite()) {
                    return Err(Error::param("attack and release times must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Per-frame smoothing weight `1 - exp(-T_frame / tau)` for a time constant in ms.
pub fn smoother_coefficient(tau_ms: f64) -> f64 {
    let frame_s = STFT.frame_period_s(MODEL_RATE);
    1.0 - (-frame_s / (tau_ms * 1e-3)).exp()
}

/// Parameter groups exposed to an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trainable {
    pub gains: bool,
    pub filterbank: bool,
    pub envelope: bool,
    pub mlp: bool,
}

impl Trainable {
    pub const GAINS: Trainable = Trainable {
        gains: true,
        filterbank: false,
        envelope: false,
        mlp: false,
    };
    pub const MLP: Trainable = Trainable {
        gains: false,
        filterbank: false,
        envelope: false,
        mlp: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpnParams {
    pub layout: BandLayout,
    /// `slopes[c]` has [`SEGMENTS`] entries; empty when an MLP supplies gains.
    pub slopes: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    /// `[C, B]` row-major analysis matrix.
    pub filterbank: Vec<f64>,
    pub envelope: Envelope,
    pub mlp: Option<AudiogramMlp>,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    version: u32,
    bands: BandLayout,
    breakpoints_spl: Vec<f64>,
    theta: Vec<BandTheta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filterbank: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    envelope: Option<Envelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mlp: Option<AudiogramMlp>,
}

#[derive(Serialize, Deserialize)]
struct BandTheta {
    a: Vec<f64>,
    z: f64,
}

impl DpnParams {
    /// Constant gain `gain_db` in every band.
    pub fn constant(layout: BandLayout, gain_db: f64) -> Self {
        let c = layout.bands();
        DpnParams {
            filterbank: layout.partition(),
            layout,
            slopes: vec![vec![0.0; SEGMENTS]; c],
            offsets: vec![gain_db; c],
            envelope: Envelope::None,
            mlp: None,
        }
    }

    pub fn identity(layout: BandLayout) -> Self {
        DpnParams::constant(layout, 0.0)
    }

    /// Parameters reproducing `table` at every breakpoint.
    pub fn from_table(layout: BandLayout, table: &GainTable) -> Result<Self> {
        if table.bands() != layout.bands() {
            return Err(Error::param(format!(
                "gain table has {} bands, layout has {}",
                table.bands(),
                layout.bands()
            )));
        }
        let init = camfit_init_standard(table)?;
        let mut p = DpnParams::identity(layout);
        p.slopes = init.slopes;
        p.offsets = init.offsets;
        Ok(p)
    }

    /// Listener-independent parameters: gains come from `mlp`.
    pub fn with_mlp(layout: BandLayout, mlp: AudiogramMlp) -> Result<Self> {
        if mlp.outputs != BREAKPOINT_COUNT {
            return Err(Error::param(format!("mlp must produce {BREAKPOINT_COUNT} outputs")));
        }
        let mut p = DpnParams::identity(layout);
        p.slopes.clear();
        p.offsets.clear();
        p.mlp = Some(mlp);
        Ok(p)
    }

    pub fn bands(&self) -> usize {
        self.layout.bands()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.bands();
        if self.filterbank.len() != c * STFT.bins() || self.filterbank.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param(format!("filterbank must be {c} x {} non-negative values", STFT.bins())));
        }
        match &self.mlp {
            Some(m) => {
                m.validate()?;
                if m.outputs != BREAKPOINT_COUNT {
                    return Err(Error::param(format!("mlp must produce {BREAKPOINT_COUNT} outputs")));
                }
            }
            None => {
                if self.slopes.len() != c || self.offsets.len() != c || self.slopes.iter().any(|s| s.len() != SEGMENTS) {
                    return Err(Error::param(format!("theta must hold {c} bands of {SEGMENTS} slopes")));
                }
                if self.slopes.iter().flatten().chain(&self.offsets).any(|v| !v.is_finite()) {
                    return Err(Error::param("theta must be finite"));
                }
            }
        }
        self.envelope.validate(c)
    }

    /// Concrete per-band gains; MLP parameters are evaluated at `audiogram`.
    pub fn resolved(&self, audiogram: Option<&Audiogram>) -> Result<DpnParams> {
        let Some(mlp) = &self.mlp else {
            return Ok(self.clone());
        };
        let a = audiogram.ok_or_else(|| Error::param("listener-independent parameters need an audiogram"))?;
        let rows = mlp.eval(&self.layout.thresholds(a));
        let mut p = self.clone();
        p.mlp = None;
        p.slopes = rows.iter().map(|r| r[..SEGMENTS].to_vec()).collect();
        p.offsets = rows.iter().map(|r| r[SEGMENTS]).collect();
        Ok(p)
    }

    /// Gain in dB of each band at each breakpoint level.
    pub fn gain_table(&self) -> Result<GainTable> {
        if self.mlp.is_some() {
            return Err(Error::param("resolve listener-independent parameters before exporting gains"));
        }
        let k = knots();
        let levels = breakpoint_levels_db();
        let gains = levels
            .iter()
            .map(|&l| {
                let j = level_to_rms(l);
                (0..self.bands()).map(|c| piecewise_gain_at(&self.slopes[c], self.offsets[c], &k, j)).collect()
            })
            .collect();
        GainTable::new(self.layout.centers(), levels, gains)
    }

    fn group_sizes(&self) -> [usize; 4] {
        let c = self.bands();
        [
            self.mlp.as_ref().map_or(0, AudiogramMlp::len),
            if self.mlp.is_some() { 0 } else { c * BREAKPOINT_COUNT },
            self.filterbank.len(),
            self.envelope.fir_len(),
        ]
    }

    fn check_groups(&self, t: Trainable) -> Result<()> {
        if t.mlp && self.mlp.is_none() {
            return Err(Error::param("no mlp to train"));
        }
        if t.gains && self.mlp.is_some() {
            return Err(Error::param("gains are produced by the mlp; train the mlp instead"));
        }
        if t.envelope && !matches!(self.envelope, Envelope::Fir { .. }) {
            return Err(Error::param("only a FIR envelope processor has trainable taps"));
        }
        Ok(())
    }

    /// Trainable values in the order mlp, slopes then offsets, filterbank, envelope taps.
    pub fn flat(&self, t: Trainable) -> Result<Vec<f64>> {
        self.check_groups(t)?;
        let mut v = Vec::new();
        if t.mlp {
            v.extend(self.mlp.as_ref().unwrap().flat());
        }
        if t.gains {
            v.extend(self.slopes.iter().flatten());
            v.extend(&self.offsets);
        }
        if t.filterbank {
            v.extend(&self.filterbank);
        }
        if t.envelope {
            if let Envelope::Fir { taps } = &self.envelope {
                v.extend(taps.iter().flatten());
            }
        }
        Ok(v)
    }

    pub fn set_flat(&mut self, t: Trainable, v: &[f64]) -> Result<()> {
        self.check_groups(t)?;
        let [m, g, f, e] = self.group_sizes();
        let expect = [(t.mlp, m), (t.gains, g), (t.filterbank, f), (t.envelope, e)]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .sum::<usize>();
        if v.len() != expect {
            return Err(Error::param(format!("expected {expect} trainable values, got {}", v.len())));
        }
        let mut rest = v;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        if t.mlp {
            self.mlp.as_mut().unwrap().set_flat(take(m))?;
        }
        if t.gains {
            let c = self.bands();
            let s = take(c * SEGMENTS);
            self.slopes = s.chunks(SEGMENTS).map(<[f64]>::to_vec).collect();
            self.offsets = take(c).to_vec();
        }
        if t.filterbank {
            self.filterbank.copy_from_slice(take(f));
        }
        if t.envelope {
            let c = self.bands();
            if let Envelope::Fir { taps } = &mut self.envelope {
                for (row, src) in taps.iter_mut().zip(take(e).chunks(c)) {
                    row.copy_from_slice(src);
                }
            }
        }
        Ok(())
    }

    /// Keeps the filterbank non-negative after an update.
    pub fn project(&mut self) {
        self.filterbank.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    /// Traced compensation of a rank-1 signal. Groups flagged in `theta`
    /// are read from that flat node (layout of [`DpnParams::flat`]); the
    /// rest are constants.
    pub fn trace(&self, tape: &mut Tape, x: Var, theta: Option<(Var, Trainable)>, audiogram: Option<&Audiogram>) -> Result<Var> {
        let (theta, t) = match theta {
            Some((v, t)) => (Some(v), t),
            None => (None, Trainable::default()),
        };
        self.check_groups(t)?;
        let c = self.bands();
        let bins = STFT.bins();
        let mut cursor = 0;
        let mut group = |tape: &mut Tape, on: bool, len: usize, shape: &[usize], value: Vec<f64>| -> Result<Var> {
            match (on, theta) {
                (true, Some(th)) => {
                    let v = tape.slice_last(th, cursor, len)?;
                    cursor += len;
                    tape.reshape(v, shape)
                }
                _ => Ok(tape.constant(Tensor::new(shape.to_vec(), value)?)),
            }
        };

        let (a, z) = match &self.mlp {
            Some(m) => {
                let au = audiogram.ok_or_else(|| Error::param("listener-independent parameters need an audiogram"))?;
                let w = group(tape, t.mlp, m.len(), &[m.len()], m.flat())?;
                let out = m.trace(tape, w, &self.layout.thresholds(au))?;
                let a = tape.slice_last(out, 0, SEGMENTS)?;
                let z = tape.slice_last(out, SEGMENTS, 1)?;
                (a, tape.reshape(z, &[c])?)
            }
            None => {
                let a = group(tape, t.gains, c * SEGMENTS, &[c, SEGMENTS], self.slopes.concat())?;
                let z = group(tape, t.gains, c, &[c], self.offsets.clone())?;
                (a, z)
            }
        };
        let f = group(tape, t.filterbank, c * bins, &[c, bins], self.filterbank.clone())?;
        let fir = match &self.envelope {
            Envelope::Fir { taps } => Some(group(tape, t.envelope, self.envelope.fir_len(), &[taps.len(), c], taps.concat())?),
            _ => None,
        };

        let n = tape.shape(x)[0];
        let pad = STFT.head_padding();
        let plan = Arc::new(FramePlan::for_stft(STFT, n + pad)?);
        let xp = tape.pad_last(x, pad, 0)?;
        let spec = tape.stft(xp, plan.clone())?;
        let j = self.trace_envelope(tape, spec, f, fir)?;
        let gl = tape.piecewise_gain(j, a, z, knots())?;
        let g = trace_synthesize_gain(tape, gl, f)?;
        let out = tape.complex_scale(spec, g)?;
        let y = tape.istft(out, plan)?;
        tape.slice_last(y, pad, n)
    }

    /// Band envelopes `[frames, bands]` after the envelope processor.
    fn trace_envelope(&self, tape: &mut Tape, spec: Var, f: Var, fir: Option<Var>) -> Result<Var> {
        let j = trace_rms_envelope(tape, spec, f)?;
        match (&self.envelope, fir) {
            (Envelope::Fir { .. }, Some(w)) => tape.conv1d_learnable(j, w),
            (Envelope::AttackRelease { attack_ms, release_ms }, _) => {
                tape.attack_release(j, smoother_coefficient(*attack_ms), smoother_coefficient(*release_ms))
            }
            _ => Ok(j),
        }
    }

    /// Per-frame band envelopes `J` (RMS) as seen by the gain curves, `[frame][band]`.
    pub fn envelopes(&self, x: &Signal) -> Result<Vec<Vec<f64>>> {
        x.require_rate(MODEL_RATE)?;
        self.validate()?;
        let c = self.bands();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(x.samples().to_vec()));
        let f = tape.constant(Tensor::new(vec![c, STFT.bins()], self.filterbank.clone())?);
        let fir = match &self.envelope {
            Envelope::Fir { taps } => Some(tape.constant(Tensor::new(vec![taps.len(), c], taps.concat())?)),
            _ => None,
        };
        let pad = STFT.head_padding();
        let plan = Arc::new(FramePlan::for_stft(STFT, x.len() + pad)?);
        let xp = tape.pad_last(v, pad, 0)?;
        let spec = tape.stft(xp, plan)?;
        let j = self.trace_envelope(&mut tape, spec, f, fir)?;
        Ok(tape.value(j).data().chunks(c).map(|r| r.to_vec()).collect())
    }

    pub fn apply(&self, x: &Signal, audiogram: Option<&Audiogram>) -> Result<Signal> {
        x.require_rate(MODEL_RATE)?;
        self.validate()?;
        crate::hl::eval_traced(x, |tape, v| self.trace(tape, v, None, audiogram))
    }

    pub fn to_json(&self) -> Result<String> {
        let partition = self.layout.partition();
        let bins = STFT.bins();
        let file = ParamFile {
            version: PARAMS_VERSION,
            bands: self.layout.clone(),
            breakpoints_spl: breakpoint_levels_db(),
            theta: self
                .slopes
                .iter()
                .zip(&self.offsets)
                .map(|(a, &z)| BandTheta { a: a.clone(), z })
                .collect(),
            filterbank: (self.filterbank != partition).then(|| self.filterbank.chunks(bins).map(<[f64]>::to_vec).collect()),
            envelope: (self.envelope != Envelope::None).then(|| self.envelope.clone()),
            mlp: self.mlp.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamFile = serde_json::from_str(text)?;
        if file.version != PARAMS_VERSION {
            return Err(Error::param(format!("unsupported parameter file version {}", file.version)));
        }
        let expected = breakpoint_levels_db();
        if file.breakpoints_spl.len() != expected.len()
            || file.breakpoints_spl.iter().zip(&expected).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::TableMismatch {
                got: file.breakpoints_spl.len(),
                expected: expected.len(),
            });
        }
        let layout = BandLayout::new(file.bands.edges_hz)?;
        let filterbank = match file.filterbank {
            Some(rows) => rows.concat(),
            None => layout.partition(),
        };
        let p = DpnParams {
            slopes: file.theta.iter().map(|t| t.a.clone()).collect(),
            offsets: file.theta.iter().map(|t| t.z).collect(),
            filterbank,
            envelope: file.envelope.unwrap_or(Envelope::None),
            mlp: file.mlp,
            layout,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DpnParams::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Band RMS `J [T, C]` of a spectrum `[T, B, 2]` through `F [C, B]`,
/// normalized so a single all-pass band gives the window-weighted frame RMS.
pub fn trace_rms_envelope(tape: &mut Tape, spec: Var, f: Var) -> Result<Var> {
    let frames = tape.shape(spec)[0];
    let bins = STFT.bins();
    let w2: f64 = hann_periodic(STFT.win_len).iter().map(|w| w * w).sum();
    let norm = STFT.n_fft as f64 * w2;
    let weights: Vec<f64> = (0..bins)
        .map(|b| if b == 0 || b == bins - 1 { 1.0 } else { 2.0 } / norm)
        .collect();
    let power = tape.abs2_complex(spec)?;
    let w = tape.constant(Tensor::vector(weights));
    let w = tape.expand_first(w, frames)?;
    let power = tape.mul(power, w)?;
    let ft = tape.transpose(f)?;
    let j2 = tape.matmul(power, ft)?;
    let j2 = tape.relu(j2)?;
    tape.sqrt(j2)
}

/// Linear bin gains `[T, B]` from band gains in dB `[T, C]`, limited to
/// [`MAX_GAIN_DB`].
pub fn trace_synthesize_gain(tape: &mut Tape, gl: Var, f: Var) -> Result<Var> {
    let g = tape.matmul(gl, f)?;
    let g = tape.clamp(g, f64::NEG_INFINITY, MAX_GAIN_DB)?;
    let g = tape.scale(g, std::f64::consts::LN_10 / 20.0)?;
    tape.exp(g)
}
