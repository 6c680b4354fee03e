//! Fine-tuning of compensation parameters through the hearing-loss model
//! against threshold-noise STOI with a level penalty.

mod adam;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON};

use crate::autodiff::{trace_scalar, Evaluation, Tape, Tensor, Var};
use crate::corpus::Utterance;
use crate::dpn::{
    AudiogramMlp, BandLayout, DpnParams, Envelope, GainTable, Trainable, BREAKPOINT_COUNT, DEFAULT_HIDDEN, STFT,
};
use crate::error::{Error, Result};
use crate::eval::{camfit_params, derive_seed, Condition};
use crate::hl::{Audiogram, Components, HlModel};
use crate::metrics::{
    level_db, stoi_thr, trace_level_db, StoiOptions, ThresholdNoiseSpec, ThresholdStoi, DEFAULT_OFFSET_DB,
};
use crate::signal::Signal;

pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_BATCH: usize = 10;
pub const DEFAULT_EXCERPT_FRAMES: usize = 500;
pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_LR_DECAY: f64 = 0.995;
pub const DEFAULT_ENVELOPE_TAPS: usize = 20;
/// Epochs of the desk-scale configuration.
pub const DESK_EPOCHS: usize = 30;
/// Learning rate of the desk-scale configuration.
pub const DESK_LR: f64 = 0.02;
/// Weaker level penalty for desk runs, where the model output sits above
/// the input level and a 0.95 weight lets the penalty dominate.
pub const DESK_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainMode {
    /// One listener; the audiogram is a standard name or a JSON path.
    ListenerDependent { audiogram: String },
    /// Each batch draws one audiogram uniformly from the pool.
    ListenerIndependent { audiograms: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    /// Prescription gain table of the listener's audiogram.
    Camfit,
    /// All slopes and offsets zero.
    Identity,
    /// A gain table CSV.
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub excerpt_frames: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// One of `dpn-ft`, `dpn-ft-env`, `dpn-ft-filt`, `dpn-li`.
    pub condition: Condition,
    pub init: Init,
    pub envelope_taps: usize,
    pub hidden: usize,
    pub noise_offset_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: DEFAULT_ALPHA,
            batch_size: DEFAULT_BATCH,
            excerpt_frames: DEFAULT_EXCERPT_FRAMES,
            max_epochs: DEFAULT_MAX_EPOCHS,
            lr: DEFAULT_LR,
            lr_decay: DEFAULT_LR_DECAY,
            seed: 0,
            mode: TrainMode::ListenerDependent {
                audiogram: "N4".into(),
            },
            condition: Condition::DpnFt,
            init: Init::Camfit,
            envelope_taps: DEFAULT_ENVELOPE_TAPS,
            hidden: DEFAULT_HIDDEN,
            noise_offset_db: DEFAULT_OFFSET_DB,
        }
    }
}

impl TrainConfig {
    /// Short runs on a small corpus: fewer epochs, a larger step and a
    /// lighter level penalty.
    pub fn desk() -> Self {
        TrainConfig {
            alpha: DESK_ALPHA,
            max_epochs: DESK_EPOCHS,
            lr: DESK_LR,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.excerpt_frames == 0 {
            return Err(Error::param("batch_size and excerpt_frames must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::param("lr must be >= 0 and lr_decay > 0"));
        }
        if !self.condition.is_trained() {
            return Err(Error::param(format!("`{}` is not a trainable condition", self.condition)));
        }
        let li = matches!(self.mode, TrainMode::ListenerIndependent { .. });
        if li != (self.condition == Condition::DpnLi) {
            return Err(Error::param("dpn-li trains in listener-independent mode; the other conditions are listener-dependent"));
        }
        if let TrainMode::ListenerIndependent { audiograms } = &self.mode {
            if audiograms.is_empty() {
                return Err(Error::param("listener-independent mode needs at least one audiogram"));
            }
        }
        if self.condition == Condition::DpnFtEnv && self.envelope_taps == 0 {
            return Err(Error::param("envelope_taps must be at least 1"));
        }
        Ok(())
    }

    pub fn audiograms(&self) -> Result<Vec<Audiogram>> {
        match &self.mode {
            TrainMode::ListenerDependent { audiogram } => Ok(vec![Audiogram::resolve(audiogram)?]),
            TrainMode::ListenerIndependent { audiograms } => audiograms.iter().map(|s| Audiogram::resolve(s)).collect(),
        }
    }

    /// Groups the condition optimizes.
    pub fn trainable(&self) -> Trainable {
        match self.condition {
            Condition::DpnFtEnv => Trainable {
                envelope: true,
                ..Trainable::GAINS
            },
            Condition::DpnFtFilt => Trainable {
                filterbank: true,
                ..Trainable::GAINS
            },
            Condition::DpnLi => Trainable::MLP,
            _ => Trainable::GAINS,
        }
    }

    /// Starting parameters for the condition.
    pub fn initial_params(&self, layout: &BandLayout) -> Result<DpnParams> {
        if self.condition == Condition::DpnLi {
            let mlp = AudiogramMlp::new(self.hidden, BREAKPOINT_COUNT, derive_seed(self.seed, &[0x6d6c70]))?;
            return DpnParams::with_mlp(layout.clone(), mlp);
        }
        let a = &self.audiograms()?[0];
        let mut p = match &self.init {
            Init::Camfit => camfit_params(layout, a)?,
            Init::Identity => DpnParams::identity(layout.clone()),
            Init::Table { path } => DpnParams::from_table(layout.clone(), &GainTable::read(path)?)?,
        };
        if self.condition == Condition::DpnFtEnv {
            p.envelope = Envelope::fir_identity(self.envelope_taps, layout.bands())?;
        }
        Ok(p)
    }
}

/// `-alpha stoi_thr(x, y) + (1 - alpha) max(0, level(y) - level(x))`.
pub fn loss(x: &Signal, y: &Signal, alpha: f64, spec: &ThresholdNoiseSpec) -> Result<f64> {
    let lx = level_db(x);
    if !lx.is_finite() {
        return Err(Error::SilentSignal);
    }
    let s = stoi_thr(x, y, spec)?;
    let penalty = (level_db(y) - lx).max(0.0);
    Ok(-alpha * s + (1.0 - alpha) * penalty)
}

/// Traced loss of `y` against a prepared reference of level `x_level_db`.
pub fn trace_loss(tape: &mut Tape, metric: &ThresholdStoi, x_level_db: f64, calibration_db: f64, y: Var, alpha: f64) -> Result<Var> {
    let s = metric.trace(tape, y)?;
    let s = tape.scale(s, -alpha)?;
    if alpha == 1.0 {
        return Ok(s);
    }
    let ly = trace_level_db(tape, y, calibration_db)?;
    let d = tape.add_scalar(ly, -x_level_db)?;
    let pen = tape.relu(d)?;
    let pen = tape.scale(pen, 1.0 - alpha)?;
    tape.add(s, pen)
}

/// A training or validation item: the central excerpt and its metric.
pub struct Excerpt {
    pub name: String,
    pub signal: Signal,
    pub level_db: f64,
    /// The utterance was shorter than the excerpt and was zero padded.
    pub padded: bool,
    metric: ThresholdStoi,
}

impl Excerpt {
    pub fn new(name: &str, x: &Signal, frames: usize, spec: &ThresholdNoiseSpec) -> Result<Self> {
        let len = frames * STFT.hop;
        let (samples, padded) = if x.len() >= len {
            let start = (x.len() - len) / 2;
            (x.samples()[start..start + len].to_vec(), false)
        } else {
            let before = (len - x.len()) / 2;
            let mut v = vec![0.0; len];
            v[before..before + x.len()].copy_from_slice(x.samples());
            (v, true)
        };
        let signal = x.with_samples(samples);
        let level_db = level_db(&signal);
        if !level_db.is_finite() {
            return Err(Error::SilentSignal);
        }
        let metric = ThresholdStoi::new(&signal, spec, StoiOptions::default())?;
        Ok(Excerpt {
            name: name.to_string(),
            signal,
            level_db,
            padded,
            metric,
        })
    }

    /// Loss through compensation and hearing loss, with the gradient over
    /// the `trainable` groups when `need_grad`.
    pub fn evaluate(
        &self,
        model: &HlModel,
        params: &DpnParams,
        trainable: Trainable,
        theta: &[f64],
        a: &Audiogram,
        alpha: f64,
        need_grad: bool,
    ) -> Result<Evaluation> {
        trace_scalar(theta, need_grad, |tape, p| {
            let x = tape.constant(Tensor::vector(self.signal.samples().to_vec()));
            let c = params.trace(tape, x, Some((p, trainable)), Some(a))?;
            let y = model.trace(tape, c, a, Components::FULL)?;
            trace_loss(tape, &self.metric, self.level_db, self.signal.calibration_db(), y, alpha)
        })
    }

    /// `stoi_thr` of the excerpt after compensation and hearing loss.
    pub fn score(&self, model: &HlModel, params: &DpnParams, a: &Audiogram) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(self.signal.samples().to_vec()));
        let c = params.trace(&mut tape, x, None, Some(a))?;
        let y = model.trace(&mut tape, c, a, Components::FULL)?;
        let s = self.metric.trace(&mut tape, y)?;
        Ok(tape.value(s).item())
    }
}

/// Excerpts of `corpus` with per-file noise seeds derived from `(seed, split, index)`.
pub fn prepare(corpus: &[Utterance], config: &TrainConfig, split: u64) -> Result<Vec<Excerpt>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let spec = ThresholdNoiseSpec {
                offset_db: config.noise_offset_db,
                seed: derive_seed(config.seed, &[split, i as u64]),
            };
            Excerpt::new(&u.name, &u.signal, config.excerpt_frames, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Mean batch loss of the epoch; empty for the initial evaluation.
    pub train_loss: Option<f64>,
    pub val_stoi_thr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (epoch 0 is the start).
    pub best: DpnParams,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<HistoryRow>,
    /// Epoch whose loss became non-finite; training stopped there.
    pub diverged: Option<usize>,
    /// Audiogram label used by each batch, in order.
    pub draws: Vec<String>,
    /// Number of excerpts that needed zero padding.
    pub padded: usize,
}

pub fn write_history(path: &std::path::Path, rows: &[HistoryRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

pub fn read_history(path: &std::path::Path) -> Result<Vec<HistoryRow>> {
    crate::io::read_csv(path)
}

/// Mean validation `stoi_thr`. In listener-independent mode file `i` is
/// scored with audiogram `i mod pool`.
pub fn validate(model: &HlModel, params: &DpnParams, val: &[Excerpt], pool: &[Audiogram]) -> Result<f64> {
    let scores = val
        .par_iter()
        .enumerate()
        .map(|(i, e)| e.score(model, params, &pool[i % pool.len()]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains from the configured initialization.
pub fn train(
    config: &TrainConfig,
    model: &HlModel,
    train_set: &[Excerpt],
    val_set: &[Excerpt],
    layout: &BandLayout,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    let init = config.initial_params(layout)?;
    train_from(config, model, init, config.trainable(), train_set, val_set, progress)
}

/// Training loop from explicit starting parameters.
pub fn train_from(
    config: &TrainConfig,
    model: &HlModel,
    init: DpnParams,
    trainable: Trainable,
    train_set: &[Excerpt],
    val_set: &[Excerpt],
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::param("training and validation sets must be non-empty"));
    }
    let pool = config.audiograms()?;
    let mut params = init;
    params.validate()?;
    let mut theta = params.flat(trainable)?;
    let mut adam = Adam::new(theta.len());
    let mut lr = config.lr;

    let val0 = validate(model, &params, val_set, &pool)?;
    let first = HistoryRow {
        epoch: 0,
        train_loss: None,
        val_stoi_thr: val0,
        lr,
    };
    progress(&first);
    let mut outcome = TrainOutcome {
        best: params.clone(),
        best_epoch: 0,
        best_val: val0,
        history: vec![first],
        diverged: None,
        draws: Vec::new(),
        padded: train_set.iter().chain(val_set).filter(|e| e.padded).count(),
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7472, epoch as u64]));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let a = &pool[rng.gen_range(0..pool.len())];
            outcome.draws.push(a.label().to_string());
            let evals = batch
                .par_iter()
                .map(|&i| train_set[i].evaluate(model, &params, trainable, &theta, a, config.alpha, true))
                .collect::<Result<Vec<Evaluation>>>()?;
            let n = evals.len() as f64;
            let batch_loss = evals.iter().map(|e| e.value).sum::<f64>() / n;
            let mut grad = vec![0.0; theta.len()];
            for e in &evals {
                for (g, v) in grad.iter_mut().zip(e.gradient.as_ref().unwrap()) {
                    *g += v / n;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                outcome.diverged = Some(epoch);
                return Ok(outcome);
            }
            losses.push(batch_loss);
            adam.update(&mut theta, &grad, lr)?;
            params.set_flat(trainable, &theta)?;
            if trainable.filterbank {
                params.project();
                theta = params.flat(trainable)?;
            }
        }
        let val = validate(model, &params, val_set, &pool)?;
        if !val.is_finite() {
            outcome.diverged = Some(epoch);
            return Ok(outcome);
        }
        let row = HistoryRow {
            epoch,
            train_loss: Some(losses.iter().sum::<f64>() / losses.len() as f64),
            val_stoi_thr: val,
            lr,
        };
        progress(&row);
        outcome.history.push(row);
        if val > outcome.best_val {
            outcome.best_val = val;
            outcome.best_epoch = epoch;
            outcome.best = params.clone();
        }
        lr *= config.lr_decay;
    }
    Ok(outcome)
}
