//! WAV input and output. Reading keeps the first channel; writing produces
//! 32-bit float mono.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Resampler, Signal, MODEL_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Convert other rates to the model rate instead of rejecting them.
    pub resample: bool,
}

pub fn read(path: &Path, opts: ReadOptions) -> Result<Signal> {
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported sample format {fmt:?} with {bits} bits"),
            ))
        }
    };
    let sig = Signal::new(samples, spec.sample_rate)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if spec.sample_rate == MODEL_RATE {
        return Ok(sig);
    }
    if !opts.resample {
        return Err(Error::UnsupportedRate {
            rate: spec.sample_rate,
            expected: MODEL_RATE,
        });
    }
    Resampler::new(spec.sample_rate, MODEL_RATE, sig.len())?.resample(&sig)
}

/// Writes `x` as 32-bit float mono, replacing `path` atomically.
pub fn write(path: &Path, x: &Signal) -> Result<()> {
    crate::io::write_atomic(path, &encode(x)?)
}

/// 32-bit float mono WAV bytes of `x`.
pub fn encode(x: &Signal) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    let mut w = WavWriter::new(&mut buf, spec)?;
    for &v in x.samples() {
        w.write_sample(v as f32)?;
    }
    w.finalize()?;
    Ok(buf.into_inner())
}
