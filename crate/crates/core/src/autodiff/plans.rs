//! Precomputed linear structures used by the traced signal ops, each with
//! its forward map and exact adjoint.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{self, Kernel};
use crate::signal::{hann_periodic, stft_frame_count, ConvMode, FirFilter, StftConfig};

/// Kernels below this length convolve directly.
const FFT_MIN_TAPS: usize = 64;

/// A set of equal-length FIR kernels applied along the last axis.
#[derive(Debug)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
    taps: usize,
    mode: ConvMode,
}

impl FilterBank {
    pub fn new(kernels: Vec<Vec<f64>>, mode: ConvMode) -> Result<Self> {
        let taps = kernels.first().map(Vec::len).unwrap_or(0);
        if taps == 0 || kernels.iter().any(|k| k.len() != taps) {
            return Err(Error::param("filter bank needs nonempty kernels of equal length"));
        }
        Ok(FilterBank {
            kernels: kernels.into_iter().map(Kernel::new).collect(),
            taps,
            mode,
        })
    }

    pub fn single(f: &FirFilter, mode: ConvMode) -> Self {
        FilterBank {
            kernels: vec![Kernel::new(f.taps().to_vec())],
            taps: f.len(),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn kernel(&self, i: usize) -> &[f64] {
        self.kernels[i].taps()
    }

    fn offset(&self) -> usize {
        match self.mode {
            ConvMode::Full => 0,
            ConvMode::Same => (self.taps - 1) / 2,
        }
    }

    pub fn out_len(&self, n: usize) -> usize {
        match self.mode {
            ConvMode::Full => n + self.taps - 1,
            ConvMode::Same => n,
        }
    }

    fn use_fft(&self, n: usize) -> bool {
        self.taps >= FFT_MIN_TAPS && n >= FFT_MIN_TAPS
    }

    /// Row `k` of the output is `x` filtered by kernel `k`.
    pub fn apply_fanout(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let (off, out_len) = (self.offset(), self.out_len(n));
        let mut out = Vec::with_capacity(self.len() * out_len);
        if !self.use_fft(n) {
            for k in &self.kernels {
                out.extend_from_slice(&k.convolve_full(x)[off..off + out_len]);
            }
            return out;
        }
        let nfft = fft::next_fft_len(n + self.taps - 1);
        let mut xs = vec![Complex64::new(0.0, 0.0); nfft];
        for (b, &v) in xs.iter_mut().zip(x) {
            b.re = v;
        }
        fft::fft_in_place(&mut xs, false);
        let scale = 1.0 / nfft as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for k in &self.kernels {
            let ks = k.spectrum(nfft);
            for ((b, a), s) in buf.iter_mut().zip(&xs).zip(ks.iter()) {
                *b = a * s;
            }
            fft::fft_in_place(&mut buf, true);
            out.extend(buf[off..off + out_len].iter().map(|c| c.re * scale));
        }
        out
    }

    /// Adjoint of [`FilterBank::apply_fanout`]: sums the correlations of each
    /// output row with its kernel.
    pub fn adjoint_fanout(&self, g: &[f64], n: usize) -> Vec<f64> {
        let (off, out_len) = (self.offset(), self.out_len(n));
        let full_len = n + self.taps - 1;
        if !self.use_fft(n) {
            let mut acc = vec![0.0; n];
            for (k, row) in self.kernels.iter().zip(g.chunks(out_len)) {
                let gf = embed(row, off, full_len);
                for (a, v) in acc.iter_mut().zip(k.correlate(&gf, n)) {
                    *a += v;
                }
            }
            return acc;
        }
        let nfft = fft::next_fft_len(full_len);
        let mut acc = vec![Complex64::new(0.0, 0.0); nfft];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for (k, row) in self.kernels.iter().zip(g.chunks(out_len)) {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (b, &v) in buf[off..].iter_mut().zip(row) {
                b.re = v;
            }
            fft::fft_in_place(&mut buf, false);
            let ks = k.spectrum(nfft);
            for ((a, b), s) in acc.iter_mut().zip(&buf).zip(ks.iter()) {
                *a += b * s.conj();
            }
        }
        fft::fft_in_place(&mut acc, true);
        let scale = 1.0 / nfft as f64;
        acc[..n].iter().map(|c| c.re * scale).collect()
    }

    fn kernel_for_row(&self, r: usize) -> &Kernel {
        if self.kernels.len() == 1 {
            &self.kernels[0]
        } else {
            &self.kernels[r]
        }
    }

    /// Each row filtered by its own kernel (or all by the single kernel).
    pub fn apply_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let n = x.len() / rows.max(1);
        let (off, out_len) = (self.offset(), self.out_len(n));
        let mut out = Vec::with_capacity(rows * out_len);
        for (r, row) in x.chunks(n.max(1)).enumerate().take(rows) {
            let full = self.kernel_for_row(r).convolve_full(row);
            out.extend_from_slice(&full[off..off + out_len]);
        }
        out
    }

    pub fn adjoint_rows(&self, g: &[f64], rows: usize, n: usize) -> Vec<f64> {
        let (off, out_len) = (self.offset(), self.out_len(n));
        let full_len = n + self.taps - 1;
        let mut out = Vec::with_capacity(rows * n);
        for (r, row) in g.chunks(out_len.max(1)).enumerate().take(rows) {
            let gf = embed(row, off, full_len);
            out.extend(self.kernel_for_row(r).correlate(&gf, n));
        }
        out
    }
}

fn embed(row: &[f64], off: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[off..off + row.len()].copy_from_slice(row);
    v
}

/// Integer-factor rate change through a centered linear-phase FIR.
#[derive(Debug, Clone)]
pub struct RateFilter {
    kernel: Vec<f64>,
    factor: usize,
}

impl RateFilter {
    pub fn new(f: &FirFilter, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::param("rate factor must be >= 1"));
        }
        Ok(RateFilter {
            kernel: f.taps().to_vec(),
            factor,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    fn center(&self) -> isize {
        ((self.kernel.len() - 1) / 2) as isize
    }

    pub fn decimated_len(&self, n: usize) -> usize {
        n.div_ceil(self.factor)
    }

    /// `y[m] = sum_j h[j] x[m f + c - j]`: same-delay filtering, then every
    /// `f`-th sample.
    pub fn decimate(&self, x: &[f64]) -> Vec<f64> {
        let (f, c, n) = (self.factor as isize, self.center(), x.len() as isize);
        (0..self.decimated_len(x.len()) as isize)
            .map(|m| {
                let base = m * f + c;
                let lo = (base - n + 1).max(0) as usize;
                let hi = (base as usize + 1).min(self.kernel.len());
                (lo..hi).map(|j| self.kernel[j] * x[(base - j as isize) as usize]).sum()
            })
            .collect()
    }

    pub fn decimate_adjoint(&self, g: &[f64], n: usize) -> Vec<f64> {
        let (f, c) = (self.factor as isize, self.center());
        let mut out = vec![0.0; n];
        for (m, &gm) in g.iter().enumerate() {
            let base = m as isize * f + c;
            let lo = (base - n as isize + 1).max(0) as usize;
            let hi = (base as usize + 1).min(self.kernel.len());
            for j in lo..hi {
                out[(base - j as isize) as usize] += self.kernel[j] * gm;
            }
        }
        out
    }

    /// Zero-stuffing by `f`, same-delay filtering and scaling by `f`,
    /// truncated to `out_len`.
    pub fn upsample(&self, x: &[f64], out_len: usize) -> Vec<f64> {
        let (f, c) = (self.factor as isize, self.center());
        let scale = self.factor as f64;
        let mut out = vec![0.0; out_len];
        for (m, &xm) in x.iter().enumerate() {
            let base = m as isize * f - c;
            let v = xm * scale;
            let lo = (-base).max(0) as usize;
            let hi = ((out_len as isize - base).max(0) as usize).min(self.kernel.len());
            for j in lo..hi {
                out[(base + j as isize) as usize] += v * self.kernel[j];
            }
        }
        out
    }

    pub fn upsample_adjoint(&self, g: &[f64], in_len: usize) -> Vec<f64> {
        let (f, c) = (self.factor as isize, self.center());
        let scale = self.factor as f64;
        let out_len = g.len() as isize;
        (0..in_len)
            .map(|m| {
                let base = m as isize * f - c;
                let lo = (-base).max(0) as usize;
                let hi = ((out_len - base).max(0) as usize).min(self.kernel.len());
                scale * (lo..hi).map(|j| self.kernel[j] * g[(base + j as isize) as usize]).sum::<f64>()
            })
            .collect()
    }
}

/// Framing, windowing and FFT sizes of a short-time transform, with the
/// squared-window normalization used for synthesis.
#[derive(Debug, Clone)]
pub struct FramePlan {
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    frames: usize,
    signal_len: usize,
    inv_env: Vec<f64>,
}

impl FramePlan {
    pub fn new(window: Vec<f64>, hop: usize, n_fft: usize, frames: usize, signal_len: usize) -> Result<Self> {
        if window.is_empty() || hop == 0 || n_fft < window.len() {
            return Err(Error::param("invalid frame plan"));
        }
        let mut env = vec![0.0; signal_len.max((frames.max(1) - 1) * hop + window.len())];
        for t in 0..frames {
            for (e, w) in env[t * hop..].iter_mut().zip(&window) {
                *e += w * w;
            }
        }
        let inv_env = env[..signal_len]
            .iter()
            .map(|&e| if e > 1e-10 { 1.0 / e } else { 0.0 })
            .collect();
        Ok(FramePlan {
            window,
            hop,
            n_fft,
            frames,
            signal_len,
            inv_env,
        })
    }

    /// Periodic-Hann plan matching [`crate::signal::stft`] for `signal_len` samples.
    pub fn for_stft(cfg: StftConfig, signal_len: usize) -> Result<Self> {
        cfg.validate_analysis()?;
        if signal_len < cfg.win_len {
            return Err(Error::InputTooShort {
                len: signal_len,
                needed: cfg.win_len,
            });
        }
        let frames = stft_frame_count(signal_len, &cfg);
        FramePlan::new(hann_periodic(cfg.win_len), cfg.hop, cfg.n_fft, frames, signal_len)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Frame-major `[T][B][2]` spectrum.
    pub fn analysis(&self, x: &[f64]) -> Vec<f64> {
        let bins = self.bins();
        let mut out = Vec::with_capacity(self.frames * bins * 2);
        let mut frame = vec![0.0; self.window.len()];
        for t in 0..self.frames {
            let start = t * self.hop;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = x.get(start + i).copied().unwrap_or(0.0) * self.window[i];
            }
            for c in fft::rfft(&frame, self.n_fft) {
                out.push(c.re);
                out.push(c.im);
            }
        }
        out
    }

    pub fn analysis_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let bins = self.bins();
        let mut out = vec![0.0; self.signal_len];
        let mut spec = vec![Complex64::new(0.0, 0.0); bins];
        for t in 0..self.frames {
            for (b, s) in spec.iter_mut().enumerate() {
                let i = (t * bins + b) * 2;
                *s = Complex64::new(g[i], g[i + 1]);
            }
            let frame = rfft_adjoint(&spec, self.n_fft);
            let start = t * self.hop;
            for (i, w) in self.window.iter().enumerate() {
                if let Some(o) = out.get_mut(start + i) {
                    *o += frame[i] * w;
                }
            }
        }
        out
    }

    pub fn synthesis(&self, z: &[f64]) -> Vec<f64> {
        let bins = self.bins();
        let mut out = vec![0.0; self.signal_len];
        let mut spec = vec![Complex64::new(0.0, 0.0); bins];
        for t in 0..self.frames {
            for (b, s) in spec.iter_mut().enumerate() {
                let i = (t * bins + b) * 2;
                *s = Complex64::new(z[i], z[i + 1]);
            }
            let frame = fft::irfft(&spec, self.n_fft);
            let start = t * self.hop;
            for (i, w) in self.window.iter().enumerate() {
                if let Some(o) = out.get_mut(start + i) {
                    *o += frame[i] * w;
                }
            }
        }
        out.iter_mut().zip(&self.inv_env).for_each(|(o, e)| *o *= e);
        out
    }

    pub fn synthesis_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let bins = self.bins();
        let scaled: Vec<f64> = g.iter().zip(&self.inv_env).map(|(a, e)| a * e).collect();
        let mut out = Vec::with_capacity(self.frames * bins * 2);
        let mut frame = vec![0.0; self.window.len()];
        for t in 0..self.frames {
            let start = t * self.hop;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = scaled.get(start + i).copied().unwrap_or(0.0) * self.window[i];
            }
            for c in irfft_adjoint(&frame, self.n_fft) {
                out.push(c.re);
                out.push(c.im);
            }
        }
        out
    }
}

/// Adjoint of [`fft::rfft`] at length `n`, treating real and imaginary
/// outputs as independent reals.
pub(crate) fn rfft_adjoint(g: &[Complex64], n: usize) -> Vec<f64> {
    let half = n / 2;
    let scaled: Vec<Complex64> = g
        .iter()
        .enumerate()
        .map(|(k, c)| if k == 0 || (n % 2 == 0 && k == half) { *c } else { c * 0.5 })
        .collect();
    fft::irfft(&scaled, n).into_iter().map(|v| v * n as f64).collect()
}

/// Adjoint of [`fft::irfft`] at length `n`. The ignored imaginary parts of
/// the DC and Nyquist bins receive zero.
pub(crate) fn irfft_adjoint(g: &[f64], n: usize) -> Vec<Complex64> {
    let half = n / 2;
    let mut s = fft::rfft(g, n);
    for (k, c) in s.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            *c = Complex64::new(c.re / n as f64, 0.0);
        } else {
            *c *= 2.0 / n as f64;
        }
    }
    s
}
