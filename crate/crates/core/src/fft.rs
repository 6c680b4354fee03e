//! FFT helpers shared by the plain DSP routines and the traced ops.
//!
//! Plans are cached per thread. Kernels that are convolved repeatedly keep
//! their spectra per FFT size in a [`Kernel`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Below this many multiply-adds a direct convolution is used.
const DIRECT_CONV_LIMIT: usize = 1 << 16;

pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    plan.process(buf);
}

/// One-sided spectrum (`n/2 + 1` bins) of `input` zero-padded to `n`.
pub fn rfft(input: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &x) in buf.iter_mut().zip(input) {
        b.re = x;
    }
    fft_in_place(&mut buf, false);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`]: Hermitian extension of a one-sided spectrum, scaled by `1/n`.
/// Imaginary parts of the DC and Nyquist bins are ignored.
pub fn irfft(spec: &[Complex64], n: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for b in 0..=half.min(spec.len().saturating_sub(1)) {
        buf[b] = spec[b];
        if b > 0 && b < n - b {
            buf[n - b] = spec[b].conj();
        }
    }
    buf[0].im = 0.0;
    if n % 2 == 0 {
        buf[half].im = 0.0;
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

pub fn next_fft_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// An FIR kernel whose spectra are memoized per FFT length.
#[derive(Debug)]
pub struct Kernel {
    taps: Vec<f64>,
    spectra: Mutex<HashMap<usize, Arc<Vec<Complex64>>>>,
}

impl Clone for Kernel {
    fn clone(&self) -> Self {
        Kernel::new(self.taps.clone())
    }
}

impl Kernel {
    pub fn new(taps: Vec<f64>) -> Self {
        Kernel {
            taps,
            spectra: Mutex::new(HashMap::new()),
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub(crate) fn spectrum(&self, n: usize) -> Arc<Vec<Complex64>> {
        let mut cache = self.spectra.lock().expect("kernel cache poisoned");
        cache
            .entry(n)
            .or_insert_with(|| {
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (b, &t) in buf.iter_mut().zip(&self.taps) {
                    b.re = t;
                }
                fft_in_place(&mut buf, false);
                Arc::new(buf)
            })
            .clone()
    }

    /// Full linear convolution, length `x.len() + taps - 1`.
    pub fn convolve_full(&self, x: &[f64]) -> Vec<f64> {
        let k = self.taps.len();
        if x.is_empty() || k == 0 {
            return Vec::new();
        }
        let out_len = x.len() + k - 1;
        if x.len().min(k) <= 32 || x.len() * k <= DIRECT_CONV_LIMIT {
            return direct_convolve(x, &self.taps);
        }
        let n = next_fft_len(out_len);
        let spec = self.spectrum(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        fft_in_place(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(spec.iter()) {
            *b *= s;
        }
        fft_in_place(&mut buf, true);
        let scale = 1.0 / n as f64;
        buf[..out_len].iter().map(|c| c.re * scale).collect()
    }

    /// Cross-correlation with the kernel: `y[i] = sum_k taps[k] * g[i + k]`,
    /// for `i` in `0..out_len`. This is the adjoint of [`Kernel::convolve_full`]
    /// restricted to the first `out_len` inputs.
    pub fn correlate(&self, g: &[f64], out_len: usize) -> Vec<f64> {
        let k = self.taps.len();
        if out_len == 0 {
            return Vec::new();
        }
        if k == 0 || g.is_empty() {
            return vec![0.0; out_len];
        }
        if g.len().min(k) <= 32 || g.len() * k <= DIRECT_CONV_LIMIT {
            let mut out = vec![0.0; out_len];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &t) in self.taps.iter().enumerate() {
                    match g.get(i + j) {
                        Some(&v) => acc += t * v,
                        None => break,
                    }
                }
                *o = acc;
            }
            return out;
        }
        // correlate(g)[i] = sum_j t[j] g[i+j]; multiply G by conj(T).
        let n = next_fft_len(g.len() + k);
        let spec = self.spectrum(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &v) in buf.iter_mut().zip(g) {
            b.re = v;
        }
        fft_in_place(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(spec.iter()) {
            *b *= s.conj();
        }
        fft_in_place(&mut buf, true);
        let scale = 1.0 / n as f64;
        (0..out_len)
            .map(|i| if i < n { buf[i].re * scale } else { 0.0 })
            .collect()
    }
}

pub fn direct_convolve(x: &[f64], taps: &[f64]) -> Vec<f64> {
    if x.is_empty() || taps.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + taps.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &t) in out[i..].iter_mut().zip(taps) {
            *o += xi * t;
        }
    }
    out
}
