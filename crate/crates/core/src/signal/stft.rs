use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Signal;
use crate::error::{Error, Result};
use crate::fft;

/// Envelope values below this are treated as uncovered by any frame.
const ENVELOPE_FLOOR: f64 = 1e-10;

/// Analysis parameters of a short-time Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl StftConfig {
    /// 256-sample window, 64 hop, 512-point FFT (power-spectrum smearing).
    pub const SMEARING: StftConfig = StftConfig {
        win_len: 256,
        hop: 64,
        n_fft: 512,
    };

    /// 5 ms window with 2.5 ms hop at 44.1 kHz (220/110), 512-point FFT.
    pub const COMPENSATION: StftConfig = StftConfig {
        win_len: 220,
        hop: 110,
        n_fft: 512,
    };

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate_analysis(&self) -> Result<()> {
        if self.win_len < 2 || self.hop == 0 || self.hop > self.win_len {
            return Err(Error::param(format!(
                "invalid STFT framing win_len={} hop={}",
                self.win_len, self.hop
            )));
        }
        if self.n_fft < self.win_len {
            return Err(Error::param(format!(
                "n_fft ({}) must be at least win_len ({})",
                self.n_fft, self.win_len
            )));
        }
        Ok(())
    }

    /// Synthesis requires the hop to divide the window at least twice so that
    /// the squared-window envelope is constant up to a periodic pattern.
    pub fn validate_synthesis(&self) -> Result<()> {
        self.validate_analysis()?;
        if self.win_len % self.hop != 0 || self.win_len / self.hop < 2 {
            return Err(Error::NotOverlapAdd {
                win_len: self.win_len,
                hop: self.hop,
            });
        }
        Ok(())
    }

    /// Leading zeros that make the first real sample fully overlapped.
    pub fn head_padding(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn frame_period_s(&self, rate: u32) -> f64 {
        self.hop as f64 / rate as f64
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames for a signal of `len` samples; the tail is zero padded
/// so that every sample lies in at least one frame.
pub fn stft_frame_count(len: usize, cfg: &StftConfig) -> usize {
    if len < cfg.win_len {
        return 0;
    }
    (len - cfg.win_len).div_ceil(cfg.hop) + 1
}

/// Overlap-added squared window over `frames` frames.
pub fn ola_envelope(cfg: &StftConfig, frames: usize) -> Vec<f64> {
    let w = hann_periodic(cfg.win_len);
    let len = if frames == 0 {
        0
    } else {
        (frames - 1) * cfg.hop + cfg.win_len
    };
    let mut env = vec![0.0; len];
    for t in 0..frames {
        for (e, wv) in env[t * cfg.hop..].iter_mut().zip(&w) {
            *e += wv * wv;
        }
    }
    env
}

/// Complex one-sided STFT stored frame-major: `data[(t * bins + b) * 2 + k]`,
/// `k = 0` real, `k = 1` imaginary.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    frames: usize,
    config: StftConfig,
    rate: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig, rate: u32, signal_len: usize) -> Self {
        Spectrogram {
            data: vec![0.0; frames * config.bins() * 2],
            frames,
            config,
            rate,
            signal_len,
        }
    }

    pub fn from_data(
        data: Vec<f64>,
        frames: usize,
        config: StftConfig,
        rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        if data.len() != frames * config.bins() * 2 {
            return Err(Error::ShapeMismatch {
                op: "spectrogram",
                left: vec![data.len()],
                right: vec![frames, config.bins(), 2],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("spectrogram data must be finite"));
        }
        Ok(Spectrogram {
            data,
            frames,
            config,
            rate,
            signal_len,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn bin(&self, frame: usize, bin: usize) -> Complex64 {
        let i = (frame * self.bins() + bin) * 2;
        Complex64::new(self.data[i], self.data[i + 1])
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> f64 {
        self.bin(frame, bin).norm()
    }
}

pub fn stft(x: &Signal, cfg: StftConfig) -> Result<Spectrogram> {
    cfg.validate_analysis()?;
    if x.len() < cfg.win_len {
        return Err(Error::InputTooShort {
            len: x.len(),
            needed: cfg.win_len,
        });
    }
    let frames = stft_frame_count(x.len(), &cfg);
    let bins = cfg.bins();
    let w = hann_periodic(cfg.win_len);
    let samples = x.samples();
    let mut data = Vec::with_capacity(frames * bins * 2);
    let mut frame = vec![0.0; cfg.win_len];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = samples.get(start + i).copied().unwrap_or(0.0) * w[i];
        }
        for c in fft::rfft(&frame, cfg.n_fft) {
            data.push(c.re);
            data.push(c.im);
        }
    }
    Ok(Spectrogram {
        data,
        frames,
        config: cfg,
        rate: x.rate(),
        signal_len: x.len(),
    })
}

/// Weighted overlap-add inverse normalized by the squared-window envelope.
pub fn istft(s: &Spectrogram) -> Result<Signal> {
    let cfg = s.config;
    cfg.validate_synthesis()?;
    let bins = cfg.bins();
    let w = hann_periodic(cfg.win_len);
    let env = ola_envelope(&cfg, s.frames);
    let mut acc = vec![0.0; env.len()];
    let mut spec = vec![Complex64::new(0.0, 0.0); bins];
    for t in 0..s.frames {
        for (b, c) in spec.iter_mut().enumerate() {
            *c = s.bin(t, b);
        }
        let frame = fft::irfft(&spec, cfg.n_fft);
        for (i, a) in acc[t * cfg.hop..t * cfg.hop + cfg.win_len].iter_mut().enumerate() {
            *a += frame[i] * w[i];
        }
    }
    let mut out: Vec<f64> = acc
        .iter()
        .zip(&env)
        .map(|(a, e)| if *e > ENVELOPE_FLOOR { a / e } else { 0.0 })
        .collect();
    out.resize(s.signal_len, 0.0);
    Signal::new(out, s.rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 44100).unwrap()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 1024];
        x[0] = 1.0;
        let s = stft(&Signal::new(x, 44100).unwrap(), StftConfig { win_len: 256, hop: 64, n_fft: 512 }).unwrap();
        let w0 = hann_periodic(256)[0];
        for b in 0..s.bins() {
            assert!((s.magnitude(0, b) - w0.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_sinusoid_peaks_in_its_bin() {
        let bin = 20;
        let n_fft = 512;
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * std::f64::consts::PI * bin as f64 * n as f64 / n_fft as f64).cos())
            .collect();
        let s = stft(&Signal::new(x, 44100).unwrap(), StftConfig { win_len: 512, hop: 128, n_fft }).unwrap();
        let t = 5;
        let peak = (0..s.bins())
            .max_by(|&a, &b| s.magnitude(t, a).total_cmp(&s.magnitude(t, b)))
            .unwrap();
        assert_eq!(peak, bin);
    }

    /// Direct overlap-add of the windowed frames, without any FFT.
    fn direct_ola(x: &[f64], cfg: &StftConfig) -> Vec<f64> {
        let frames = stft_frame_count(x.len(), cfg);
        let w = hann_periodic(cfg.win_len);
        let env = ola_envelope(cfg, frames);
        let mut acc = vec![0.0; env.len()];
        for t in 0..frames {
            for i in 0..cfg.win_len {
                let v = x.get(t * cfg.hop + i).copied().unwrap_or(0.0);
                acc[t * cfg.hop + i] += v * w[i] * w[i];
            }
        }
        acc.iter().zip(&env).map(|(a, e)| if *e > ENVELOPE_FLOOR { a / e } else { 0.0 }).collect()
    }

    #[test]
    fn roundtrip_matches_direct_overlap_add() {
        for cfg in [StftConfig::SMEARING, StftConfig::COMPENSATION] {
            let x = noise(44100, 7);
            let y = istft(&stft(&x, cfg).unwrap()).unwrap();
            let oracle = direct_ola(x.samples(), &cfg);
            let interior = cfg.head_padding()..x.len() - cfg.head_padding();
            for i in interior {
                assert!((y.samples()[i] - x.samples()[i]).abs() <= 1e-6);
                assert!((y.samples()[i] - oracle[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let s = Spectrogram::zeros(10, StftConfig::SMEARING, 44100, 800);
        let y = istft(&s).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_idempotent() {
        let x = noise(8000, 3);
        let cfg = StftConfig::SMEARING;
        let s1 = stft(&x, cfg).unwrap();
        let s2 = stft(&istft(&s1).unwrap(), cfg).unwrap();
        let s3 = stft(&istft(&s2).unwrap(), cfg).unwrap();
        let norm: f64 = s2.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = s2.data().iter().zip(s3.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff / norm <= 1e-6);
    }

    #[test]
    fn too_short_and_non_cola_are_rejected() {
        let x = noise(100, 1);
        assert!(matches!(stft(&x, StftConfig::SMEARING), Err(Error::InputTooShort { .. })));
        let cfg = StftConfig { win_len: 256, hop: 100, n_fft: 512 };
        let s = stft(&noise(1000, 1), cfg).unwrap();
        assert!(matches!(istft(&s), Err(Error::NotOverlapAdd { .. })));
    }

    #[test]
    fn parseval_with_one_sided_weighting() {
        let x = noise(4096, 11);
        let cfg = StftConfig::SMEARING;
        let s = stft(&x, cfg).unwrap();
        let w = hann_periodic(cfg.win_len);
        for t in [0, 3, 17] {
            let mut spec_energy = 0.0;
            for b in 0..s.bins() {
                let c = if b == 0 || b == cfg.n_fft / 2 { 1.0 } else { 2.0 };
                spec_energy += c * s.bin(t, b).norm_sqr();
            }
            spec_energy /= cfg.n_fft as f64;
            let time_energy: f64 = (0..cfg.win_len)
                .map(|i| (x.samples()[t * cfg.hop + i] * w[i]).powi(2))
                .sum();
            assert!((spec_energy - time_energy).abs() <= 1e-6 * time_energy);
        }
    }
}
