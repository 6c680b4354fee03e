//! `hlc`: hearing-loss simulation, compensation fitting and evaluation.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hlc_core::corpus::{load_dir, synth_corpus, write_corpus, SynthConfig};
use hlc_core::dpn::{prescribe, BandLayout, DpnParams, Envelope, GainTable};
use hlc_core::error::Error;
use hlc_core::eval::{evaluate, mean_of, Condition, EvalConfig, FittedModels};
use hlc_core::hl::{Audiogram, Components, HlConfig, HlModel};
use hlc_core::metrics::write_report;
use hlc_core::signal::wav;
use hlc_core::train::{prepare, train, write_history, TrainConfig};

use manifest::{manifest_path, RunManifest};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "hlc", version, about = "Hearing-loss simulation and compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pass a WAV file through the hearing-loss model.
    Simulate(SimulateArgs),
    /// Convert a gain table CSV to compensation parameters.
    CamfitInit(CamfitInitArgs),
    /// Write the prescription gain table of an audiogram.
    Prescribe(PrescribeArgs),
    /// Apply compensation parameters to a WAV file.
    Compensate(CompensateArgs),
    /// Fine-tune compensation parameters on a corpus.
    Fit(FitArgs),
    /// Score conditions with threshold-noise STOI.
    Eval(EvalArgs),
    /// Export per-band gain against input level.
    GainCurves(GainCurvesArgs),
    /// Write a synthetic speech corpus.
    SynthCorpus(SynthArgs),
    /// Re-run a command from its manifest and compare the outputs.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Standard audiogram name (N1..N6, S1..S3) or JSON file.
    #[arg(long)]
    audiogram: String,
    #[arg(long, conflicts_with = "recruitment_only")]
    smearing_only: bool,
    #[arg(long)]
    recruitment_only: bool,
    /// Resample inputs that are not at 44.1 kHz.
    #[arg(long)]
    resample: bool,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct CamfitInitArgs {
    #[arg(long)]
    table: PathBuf,
    /// Add 10/100 ms attack/release envelope smoothing.
    #[arg(long)]
    smoothing: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PrescribeArgs {
    #[arg(long)]
    audiogram: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompensateArgs {
    #[arg(long)]
    params: PathBuf,
    /// Needed by listener-independent parameters.
    #[arg(long)]
    audiogram: Option<String>,
    #[arg(long)]
    resample: bool,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Training configuration JSON; missing fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// History CSV; defaults to `<output>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    resample: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Repeatable.
    #[arg(long, required = true)]
    audiogram: Vec<String>,
    /// `[CONDITION[@AUDIOGRAM]=]PATH`, repeatable. Without a condition the
    /// file counts as dpn-li if it holds an mlp and dpn-ft otherwise.
    #[arg(long)]
    params: Vec<String>,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated; defaults to no-compensation, dpn-camfit and the
    /// conditions of the given parameter files.
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for one gain-curve CSV per evaluated model.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    resample: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GainCurvesArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    audiogram: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// What a command touched, for its manifest.
struct Run {
    primary: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    seed: u64,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse_from(std::iter::once("hlc".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(f) = configure_threads() {
        return report(f);
    }
    let result = match cli.command {
        Command::Replay(args) => replay(&args.manifest),
        command => execute(command, &argv).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(EXIT_USAGE)
        }
        Failure::Data(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HLC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("HLC_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

/// Runs a command and writes its manifest next to the primary output.
fn execute(command: Command, argv: &[String]) -> CliResult<RunManifest> {
    let name = argv.first().cloned().unwrap_or_default();
    let start = Instant::now();
    let run = match command {
        Command::Simulate(a) => simulate(a)?,
        Command::CamfitInit(a) => camfit_init(a)?,
        Command::Prescribe(a) => prescribe_cmd(a)?,
        Command::Compensate(a) => compensate(a)?,
        Command::Fit(a) => fit(a)?,
        Command::Eval(a) => eval(a)?,
        Command::GainCurves(a) => gain_curves(a)?,
        Command::SynthCorpus(a) => synth(a)?,
        Command::Replay(_) => return Err(Failure::Usage("replay cannot be nested".into())),
    };
    let mut m = RunManifest {
        command: name,
        argv: argv.to_vec(),
        cwd: std::env::current_dir().map_err(|e| Error::Io {
            path: ".".into(),
            source: e,
        })?,
        config: run.config,
        inputs: run.inputs,
        outputs: Vec::new(),
        seed: run.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: 0.0,
    };
    m.record_outputs(&run.outputs)?;
    m.wall_clock_s = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&run.primary))?;
    Ok(m)
}

fn replay(path: &Path) -> CliResult<()> {
    let old = RunManifest::read(path)?;
    std::env::set_current_dir(&old.cwd).map_err(|e| Error::Io {
        path: old.cwd.clone(),
        source: e,
    })?;
    let cli = Cli::try_parse_from(std::iter::once("hlc".to_string()).chain(old.argv.iter().cloned()))
        .map_err(|e| Failure::Usage(format!("manifest arguments do not parse: {e}")))?;
    let new = execute(cli.command, &old.argv)?;
    let mut differ = Vec::new();
    for o in &old.outputs {
        match new.outputs.iter().find(|n| n.path == o.path) {
            Some(n) if n.sha256 == o.sha256 => {}
            _ => differ.push(o.path.display().to_string()),
        }
    }
    if differ.is_empty() && new.outputs.len() == old.outputs.len() {
        println!("replay: {} outputs identical", old.outputs.len());
        Ok(())
    } else {
        Err(Failure::Data(Error::InvalidParameter(format!(
            "replay differs from the manifest: {}",
            differ.join(", ")
        ))))
    }
}

fn resolve_audiogram(s: &str) -> CliResult<Audiogram> {
    Ok(Audiogram::resolve(s)?)
}

fn audiogram_json(a: &Audiogram) -> serde_json::Value {
    serde_json::from_str(&a.to_json()).unwrap_or(serde_json::Value::Null)
}

fn simulate(a: SimulateArgs) -> CliResult<Run> {
    let aud = resolve_audiogram(&a.audiogram)?;
    let components = if a.smearing_only {
        Components::SMEARING_ONLY
    } else if a.recruitment_only {
        Components::RECRUITMENT_ONLY
    } else {
        Components::FULL
    };
    let x = wav::read(&a.input, wav::ReadOptions { resample: a.resample })?;
    let model = HlModel::new(HlConfig::default())?;
    let y = model.apply(&x, &aud, components)?;
    wav::write(&a.output, &y)?;
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![a.input],
        outputs: vec![a.output],
        config: json!({
            "audiogram": audiogram_json(&aud),
            "components": components,
            "model": HlConfig::default(),
            "resample": a.resample,
        }),
        seed: 0,
    })
}

fn camfit_init(a: CamfitInitArgs) -> CliResult<Run> {
    let table = GainTable::read(&a.table)?;
    let layout = BandLayout::default();
    let mut p = DpnParams::from_table(layout.clone(), &table)?;
    if a.smoothing {
        p.envelope = Envelope::smoothing();
    }
    p.write(&a.output)?;
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![a.table],
        outputs: vec![a.output],
        config: json!({ "bands": layout, "smoothing": a.smoothing }),
        seed: 0,
    })
}

fn prescribe_cmd(a: PrescribeArgs) -> CliResult<Run> {
    let aud = resolve_audiogram(&a.audiogram)?;
    let layout = BandLayout::default();
    prescribe(&aud, &layout.centers())?.write(&a.output)?;
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![],
        outputs: vec![a.output],
        config: json!({ "audiogram": audiogram_json(&aud), "bands": layout }),
        seed: 0,
    })
}

fn compensate(a: CompensateArgs) -> CliResult<Run> {
    let p = DpnParams::read(&a.params)?;
    let aud = a.audiogram.as_deref().map(resolve_audiogram).transpose()?;
    if p.mlp.is_some() && aud.is_none() {
        return Err(Failure::Usage("these parameters are listener-independent; pass --audiogram".into()));
    }
    let x = wav::read(&a.input, wav::ReadOptions { resample: a.resample })?;
    let y = p.apply(&x, aud.as_ref())?;
    wav::write(&a.output, &y)?;
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![a.params, a.input],
        outputs: vec![a.output],
        config: json!({ "audiogram": aud.as_ref().map(audiogram_json), "resample": a.resample }),
        seed: 0,
    })
}

fn fit(a: FitArgs) -> CliResult<Run> {
    let config: TrainConfig = hlc_core::io::read_json(&a.config)?;
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let train_u = load_dir(&a.train, a.resample)?;
    let val_u = load_dir(&a.val, a.resample)?;
    let model = HlModel::new(HlConfig::default())?;
    let tr = prepare(&train_u, &config, 0)?;
    let va = prepare(&val_u, &config, 1)?;
    let padded = tr.iter().chain(&va).filter(|e| e.padded).count();
    if padded > 0 {
        eprintln!("note: {padded} utterances are shorter than the excerpt and were zero padded");
    }
    let layout = BandLayout::default();
    let out = train(&config, &model, &tr, &va, &layout, &mut |r| {
        let loss = r.train_loss.map_or("-".to_string(), |l| format!("{l:.5}"));
        eprintln!("epoch {:>3}  train_loss {loss}  val_stoi_thr {:.5}  lr {:.3e}", r.epoch, r.val_stoi_thr, r.lr);
    })?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut n = a.output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        n.push(".history.csv");
        a.output.with_file_name(n)
    });
    out.best.write(&a.output)?;
    write_history(&history, &out.history)?;
    eprintln!("best epoch {} with val_stoi_thr {:.5}", out.best_epoch, out.best_val);
    if let Some(epoch) = out.diverged {
        eprintln!("training diverged; wrote the best checkpoint before epoch {epoch}");
        return Err(Failure::Data(Error::Diverged { epoch }));
    }
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![a.config, a.train, a.val],
        outputs: vec![a.output, history],
        config: serde_json::to_value(&config).map_err(Error::from)?,
        seed: config.seed,
    })
}

/// `[CONDITION[@AUDIOGRAM]=]PATH`.
fn parse_params_spec(spec: &str) -> CliResult<(Option<Condition>, Option<String>, PathBuf)> {
    let Some((head, path)) = spec.split_once('=') else {
        return Ok((None, None, PathBuf::from(spec)));
    };
    let (cond, aud) = match head.split_once('@') {
        Some((c, a)) => (c, Some(a.to_string())),
        None => (head, None),
    };
    let cond: Condition = cond.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if !cond.is_trained() {
        return Err(Failure::Usage(format!("`{cond}` does not take a parameter file")));
    }
    Ok((Some(cond), aud, PathBuf::from(path)))
}

fn eval(a: EvalArgs) -> CliResult<Run> {
    let audiograms = a.audiogram.iter().map(|s| resolve_audiogram(s)).collect::<CliResult<Vec<_>>>()?;
    let layout = BandLayout::default();
    let mut fitted = FittedModels::default();
    let mut conditions: Vec<Condition> = Vec::new();
    let mut inputs = vec![a.corpus.clone()];
    for spec in &a.params {
        let (cond, aud, path) = parse_params_spec(spec)?;
        let p = DpnParams::read(&path)?;
        let cond = cond.unwrap_or(if p.mlp.is_some() { Condition::DpnLi } else { Condition::DpnFt });
        let targets: Vec<String> = match aud {
            Some(label) => vec![label],
            None => audiograms.iter().map(|x| x.label().to_string()).collect(),
        };
        for label in targets {
            fitted.insert(cond, &label, p.clone())?;
        }
        if !conditions.contains(&cond) {
            conditions.push(cond);
        }
        inputs.push(path);
    }
    if a.conditions.is_empty() {
        conditions.insert(0, Condition::DpnCamfit);
        conditions.insert(0, Condition::NoCompensation);
    } else {
        conditions = a
            .conditions
            .iter()
            .map(|s| s.parse::<Condition>().map_err(|e| Failure::Usage(e.to_string())))
            .collect::<CliResult<_>>()?;
    }
    let corpus = load_dir(&a.corpus, a.resample)?;
    let model = HlModel::new(HlConfig::default())?;
    let config = EvalConfig {
        seed: a.seed,
        ..Default::default()
    };
    let rows = evaluate(&model, &corpus, &audiograms, &conditions, &fitted, &layout, &config)?;
    write_report(&a.output, &rows)?;
    let mut outputs = vec![a.output.clone()];
    for aud in &audiograms {
        for &c in &conditions {
            if let Some(m) = mean_of(&rows, c, aud.label()) {
                println!("{:<10} {:<22} {:.4}", aud.label(), c.as_str(), m);
            }
        }
    }
    if let Some(dir) = &a.curves {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for aud in &audiograms {
            for &c in &conditions {
                if let Some(p) = fitted.params_for(c, aud, &layout)? {
                    let path = dir.join(format!("{}_{}.csv", c.as_str(), aud.label()));
                    p.gain_table()?.write(&path)?;
                    outputs.push(path);
                }
            }
        }
    }
    Ok(Run {
        primary: a.output,
        inputs,
        outputs,
        config: json!({
            "audiograms": audiograms.iter().map(audiogram_json).collect::<Vec<_>>(),
            "conditions": conditions,
            "eval": config,
            "bands": layout,
        }),
        seed: a.seed,
    })
}

fn gain_curves(a: GainCurvesArgs) -> CliResult<Run> {
    let p = DpnParams::read(&a.params)?;
    let aud = a.audiogram.as_deref().map(resolve_audiogram).transpose()?;
    if p.mlp.is_some() && aud.is_none() {
        return Err(Failure::Usage("these parameters are listener-independent; pass --audiogram".into()));
    }
    p.resolved(aud.as_ref())?.gain_table()?.write(&a.output)?;
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![a.params],
        outputs: vec![a.output],
        config: json!({ "audiogram": aud.as_ref().map(audiogram_json) }),
        seed: 0,
    })
}

fn synth(a: SynthArgs) -> CliResult<Run> {
    if a.count == 0 || !(a.duration > 0.0) {
        return Err(Failure::Usage("count and duration must be positive".into()));
    }
    let cfg = SynthConfig {
        duration_s: a.duration,
        ..Default::default()
    };
    let utts = synth_corpus(a.count, a.seed, &cfg)?;
    write_corpus(&a.output, &utts)?;
    let outputs = utts.iter().map(|u| a.output.join(&u.name)).collect();
    Ok(Run {
        primary: a.output.clone(),
        inputs: vec![],
        outputs,
        config: serde_json::to_value(cfg).map_err(Error::from)?,
        seed: a.seed,
    })
}
