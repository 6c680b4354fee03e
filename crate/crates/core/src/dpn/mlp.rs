//! Audiogram-conditioned parameter network: one hidden ELU layer shared by
//! all bands, mapping a band's hearing threshold to its gain parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 80;
/// Thresholds in dB HL are divided by this before entering the network.
pub const INPUT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudiogramMlp {
    pub hidden: usize,
    pub outputs: usize,
    /// `[hidden]`, the single input's weights.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `[hidden, outputs]`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl AudiogramMlp {
    /// Uniform initialization in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(hidden: usize, outputs: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || outputs == 0 {
            return Err(Error::param("mlp layers must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-r..=r)).collect()
        };
        let w1 = uniform(1, hidden, hidden);
        let w2 = uniform(hidden, outputs, hidden * outputs);
        Ok(AudiogramMlp {
            hidden,
            outputs,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; outputs],
        })
    }

    pub fn len(&self) -> usize {
        2 * self.hidden + self.hidden * self.outputs + self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[w1 | b1 | w2 | b2]`.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::param(format!("mlp expects {} weights, got {}", self.len(), v.len())));
        }
        let (h, o) = (self.hidden, self.outputs);
        self.w1.copy_from_slice(&v[..h]);
        self.b1.copy_from_slice(&v[h..2 * h]);
        self.w2.copy_from_slice(&v[2 * h..2 * h + h * o]);
        self.b2.copy_from_slice(&v[2 * h + h * o..]);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (h, o) = (self.hidden, self.outputs);
        if self.w1.len() != h || self.b1.len() != h || self.w2.len() != h * o || self.b2.len() != o {
            return Err(Error::param("mlp weight shapes do not match its layer sizes"));
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::param("mlp weights must be finite"));
        }
        Ok(())
    }

    /// Output rows for each threshold in `h_db`.
    pub fn eval(&self, h_db: &[f64]) -> Vec<Vec<f64>> {
        h_db.iter()
            .map(|&h| {
                let x = h / INPUT_SCALE;
                let hidden: Vec<f64> = self
                    .w1
                    .iter()
                    .zip(&self.b1)
                    .map(|(w, b)| elu(w * x + b))
                    .collect();
                (0..self.outputs)
                    .map(|k| self.b2[k] + hidden.iter().enumerate().map(|(i, v)| v * self.w2[i * self.outputs + k]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Traced network on `[C]` thresholds with weights taken from the flat
    /// node `theta` (layout of [`AudiogramMlp::flat`]); returns `[C, outputs]`.
    pub fn trace(&self, tape: &mut Tape, theta: Var, h_db: &[f64]) -> Result<Var> {
        let (h, o, c) = (self.hidden, self.outputs, h_db.len());
        let w1 = tape.slice_last(theta, 0, h)?;
        let w1 = tape.reshape(w1, &[1, h])?;
        let b1 = tape.slice_last(theta, h, h)?;
        let w2 = tape.slice_last(theta, 2 * h, h * o)?;
        let w2 = tape.reshape(w2, &[h, o])?;
        let b2 = tape.slice_last(theta, 2 * h + h * o, o)?;
        let x = tape.constant(Tensor::new(vec![c, 1], h_db.iter().map(|v| v / INPUT_SCALE).collect())?);
        let z1 = tape.matmul(x, w1)?;
        let b1 = tape.expand_first(b1, c)?;
        let z1 = tape.add(z1, b1)?;
        let a1 = tape.elu(z1)?;
        let z2 = tape.matmul(a1, w2)?;
        let b2 = tape.expand_first(b2, c)?;
        tape.add(z2, b2)
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_only_ignores_input() {
        let mut m = AudiogramMlp::new(4, 3, 0).unwrap();
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        m.b2 = vec![1.0, -2.0, 3.0];
        for row in m.eval(&[0.0, 50.0, 90.0]) {
            assert_eq!(row, vec![1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = AudiogramMlp::new(80, 122, 7).unwrap();
        assert_eq!(a, AudiogramMlp::new(80, 122, 7).unwrap());
        assert_ne!(a, AudiogramMlp::new(80, 122, 8).unwrap());
        let r = (6.0f64 / 202.0).sqrt();
        assert!(a.w2.iter().all(|w| w.abs() <= r));
        assert_eq!(a.len(), a.flat().len());
    }

    #[test]
    fn trace_matches_eval() {
        let mut m = AudiogramMlp::new(5, 4, 3).unwrap();
        m.b1 = vec![0.1, -0.3, 0.2, 0.0, -1.0];
        m.b2 = vec![0.5, 0.0, -0.5, 1.0];
        let h = [10.0, 45.0, 80.0];
        let mut tape = Tape::new();
        let theta = tape.constant(Tensor::vector(m.flat()));
        let out = m.trace(&mut tape, theta, &h).unwrap();
        let expect: Vec<f64> = m.eval(&h).concat();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let m = AudiogramMlp::new(3, 2, 1).unwrap();
        let mut n = AudiogramMlp::new(3, 2, 2).unwrap();
        n.set_flat(&m.flat()).unwrap();
        assert_eq!(m, n);
    }
}
