//! `hdemg` command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use hdemg::decomp::{build_report, decompose, DecompParams};
use hdemg::gesture::{cross_validate, evaluate, summarize_folds, train, EvalReport, TrainConfig};
use hdemg::io::{
    confusion_csv, confusion_svg, dataset_to_recording, qc_input, qc_report, read_json,
    read_model, read_recording, recording_to_dataset, signals_csv, signals_svg, spikes_csv,
    to_json_string, units_csv, write_json, write_model, write_recording, CrossValidationDoc,
    GroundTruthDoc, CROSSVAL_SCHEMA_VERSION, RECORDING_MAGIC,
};
use hdemg::metrics::{assess_against_truth, AgreementParams, DecompositionReport};
use hdemg::signal::{
    apply_filter, preprocess_baseline, preprocess_gesture, FilterSpec, TTestVariant,
};
use hdemg::synth::{generate, synth_gesture_dataset, GestureSynthConfig, SynthConfig, WET_SNR_GAIN_DB};
use hdemg::{Error, Recording};

#[derive(Parser)]
#[command(name = "hdemg", version, about = "HD-EMG synthesis, preprocessing, motor-unit decomposition and gesture classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a recording and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Apply a preprocessing chain to a recording.
    Filter(FilterArgs),
    /// Channel RMS, z-score outliers and an optional two-recording t-test.
    Qc(QcArgs),
    /// Decompose a recording into motor units.
    Decompose(DecomposeArgs),
    /// Clean, deduplicate and score a decomposition against ground truth.
    Metrics(MetricsArgs),
    /// Synthesize a labeled gesture window dataset.
    GestureSynth(GestureSynthArgs),
    /// Train the gesture classifier.
    Train(TrainArgs),
    /// Evaluate a trained classifier on a dataset.
    Eval(EvalArgs),
    /// K-fold cross-validation of the gesture classifier.
    Crossval(CrossvalArgs),
    /// Render CSV tables and SVG plots from a recording or a JSON report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output recording container.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON sidecar [default: <out>.truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
    /// JSON file with synthesis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    units: Option<usize>,
    /// Duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Sample rate in Hz.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Signal-to-noise ratio in dB.
    #[arg(long, conflicts_with = "noiseless")]
    snr: Option<f64>,
    /// Disable additive noise.
    #[arg(long)]
    noiseless: bool,
    /// Add the gelled-electrode SNR gain.
    #[arg(long)]
    wet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 50 Hz notch, 10-500 Hz band-pass.
    Baseline,
    /// 50/100/150 Hz notches, 20-500 Hz band-pass.
    Gesture,
    /// The filters given by --notch and --bandpass.
    Custom,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    preset: Preset,
    /// Notch center in Hz (custom preset, repeatable, applied first).
    #[arg(long)]
    notch: Vec<f64>,
    /// Band-pass edges as LOW:HIGH in Hz (custom preset, applied after notches).
    #[arg(long, value_parser = parse_band)]
    bandpass: Option<(f64, f64)>,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

#[derive(Args)]
struct QcArgs {
    /// Input recording; give twice for a t-test between the two.
    #[arg(long = "in", required = true, num_args = 1)]
    inputs: Vec<PathBuf>,
    /// |z| above this flags a channel.
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Use Welch's unequal-variance test instead of the pooled test.
    #[arg(long)]
    welch: bool,
    /// Write each input with its outlier channels masked (one path per input).
    #[arg(long)]
    masked_out: Vec<PathBuf>,
    /// JSON report [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON report [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with decomposition settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Silhouette cutoff for accepting a source.
    #[arg(long)]
    sil: Option<f64>,
    /// Number of separation-vector initializations.
    #[arg(long)]
    iters: Option<usize>,
    /// Extension factor (delayed copies per channel).
    #[arg(long)]
    extension: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Decomposition report JSON.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth sidecar JSON.
    #[arg(long)]
    truth: PathBuf,
    /// JSON file with agreement settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spike matching tolerance in samples.
    #[arg(long)]
    tol: Option<usize>,
    /// Largest estimate-to-truth offset searched, in ms.
    #[arg(long)]
    max_lag_ms: Option<f64>,
    /// JSON output [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GestureSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    windows_per_class: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    /// Add the gelled-electrode SNR gain.
    #[arg(long)]
    wet: bool,
}

#[derive(Args)]
struct TrainFlags {
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset container written by gesture-synth.
    #[arg(long)]
    data: PathBuf,
    /// Output model blob.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch mean training loss as JSON.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON report [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
    /// JSON report [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Recording container, decomposition report or evaluation/cross-validation JSON.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Channels to plot for a recording [default: first four active].
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
    /// Largest number of points per plotted trace.
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => read_json(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => write_json(p, value)?,
        None => print!("{}", to_json_string(value)?),
    }
    Ok(())
}

fn read_rec(path: &Path) -> Result<Recording, Failure> {
    read_recording(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn run_synth(a: SynthArgs) -> Outcome {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.num_channels, a.channels);
    set(&mut cfg.num_units, a.units);
    set(&mut cfg.duration_s, a.duration);
    set(&mut cfg.sample_rate, a.sample_rate);
    if a.snr.is_some() {
        cfg.snr_db = a.snr;
    }
    if a.noiseless {
        cfg.snr_db = None;
    }
    if a.wet {
        cfg = cfg.wet();
    }
    let gt = generate(&cfg)?;
    write_recording(&a.out, &gt.recording)?;
    let truth = a.truth.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth.json");
        p.into()
    });
    write_json(&truth, &GroundTruthDoc::from_ground_truth(&gt))?;
    println!(
        "wrote {} ({} channels, {} samples, {} units)",
        a.out.display(),
        gt.recording.num_channels(),
        gt.recording.num_samples(),
        gt.trains.len()
    );
    Ok(())
}

fn run_filter(a: FilterArgs) -> Outcome {
    let rec = read_rec(&a.input)?;
    let custom = !a.notch.is_empty() || a.bandpass.is_some();
    let out = match a.preset {
        Preset::Baseline | Preset::Gesture if custom => {
            return Err(Failure::Usage("--notch/--bandpass require --preset custom".into()))
        }
        Preset::Baseline => preprocess_baseline(&rec)?,
        Preset::Gesture => preprocess_gesture(&rec)?,
        Preset::Custom => {
            if !custom {
                return Err(Failure::Usage("--preset custom needs --notch or --bandpass".into()));
            }
            let mut chain: Vec<FilterSpec> = a.notch.iter().map(|&f| FilterSpec::notch(f)).collect();
            if let Some((lo, hi)) = a.bandpass {
                chain.push(FilterSpec::bandpass(lo, hi));
            }
            let mut current = rec;
            for spec in &chain {
                current = apply_filter(&current, spec)?;
            }
            current
        }
    };
    write_recording(&a.out, &out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_qc(a: QcArgs) -> Outcome {
    if a.inputs.len() > 2 {
        return Err(Failure::Usage("qc takes one or two --in recordings".into()));
    }
    if !a.masked_out.is_empty() && a.masked_out.len() != a.inputs.len() {
        return Err(Failure::Usage("give one --masked-out per --in".into()));
    }
    let mut inputs = Vec::new();
    for (k, path) in a.inputs.iter().enumerate() {
        let rec = read_rec(path)?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let q = qc_input(&name, &rec, a.threshold)?;
        if let Some(dst) = a.masked_out.get(k) {
            let mut mask = rec.channel_mask().to_vec();
            for (i, &c) in q.channels.iter().enumerate() {
                if q.stats.outlier[i] {
                    mask[c] = false;
                }
            }
            let mut masked = rec.clone();
            masked.set_channel_mask(mask)?;
            write_recording(dst, &masked)?;
        }
        inputs.push(q);
    }
    let variant = if a.welch { TTestVariant::Welch } else { TTestVariant::Pooled };
    emit(&qc_report(inputs, variant, a.alpha)?, a.out.as_deref())
}

fn run_decompose(a: DecomposeArgs) -> Outcome {
    let mut params: DecompParams = load_config(a.config.as_deref())?;
    set(&mut params.sil_cutoff, a.sil);
    set(&mut params.max_sources, a.iters);
    set(&mut params.seed, a.seed);
    if a.extension.is_some() {
        params.extension_factor = a.extension;
    }
    let rec = read_rec(&a.input)?;
    let estimates = decompose(&rec, &params)?;
    let report = build_report(&estimates, rec.sample_rate(), &params)?;
    eprintln!(
        "{} sources accepted, {} after cleaning",
        report.count_before_cleaning, report.count_after_cleaning
    );
    emit(&report, a.out.as_deref())
}

fn run_metrics(a: MetricsArgs) -> Outcome {
    let mut params: AgreementParams = load_config(a.config.as_deref())?;
    set(&mut params.tol_samples, a.tol);
    set(&mut params.max_lag_ms, a.max_lag_ms);
    let report: DecompositionReport = read_json(&a.report)?;
    let truth: GroundTruthDoc = read_json(&a.truth)?;
    let trains: Vec<&[usize]> = truth.trains.iter().map(|t| t.spike_samples.as_slice()).collect();
    let num_samples = truth.trains.first().map_or(0, |t| t.duration_samples);
    let out = assess_against_truth(&report.units, &trains, num_samples, &params);
    emit(&out, a.out.as_deref())
}

fn run_gesture_synth(a: GestureSynthArgs) -> Outcome {
    let mut cfg: GestureSynthConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.num_classes, a.classes);
    set(&mut cfg.windows_per_class, a.windows_per_class);
    set(&mut cfg.num_channels, a.channels);
    set(&mut cfg.snr_db, a.snr);
    if a.wet {
        cfg.snr_db += WET_SNR_GAIN_DB;
    }
    let ds = synth_gesture_dataset(&cfg)?;
    write_recording(&a.out, &dataset_to_recording(&ds)?)?;
    println!("wrote {} ({} windows)", a.out.display(), ds.len());
    Ok(())
}

fn train_config(f: &TrainFlags) -> Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = load_config(f.config.as_deref())?;
    set(&mut cfg.seed, f.seed);
    set(&mut cfg.epochs, f.epochs);
    set(&mut cfg.batch_size, f.batch_size);
    set(&mut cfg.adam.lr, f.lr);
    set(&mut cfg.filters, f.filters);
    set(&mut cfg.hidden, f.hidden);
    Ok(cfg)
}

fn read_dataset(path: &Path) -> Result<hdemg::gesture::WindowedDataset, Failure> {
    recording_to_dataset(&read_rec(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn run_train(a: TrainArgs) -> Outcome {
    let cfg = train_config(&a.train)?;
    let ds = read_dataset(&a.data)?;
    let model = train(&ds, &cfg)?;
    write_model(&a.out, &model.params)?;
    if let Some(p) = &a.losses {
        write_json(p, &model.epoch_losses)?;
    }
    println!(
        "wrote {} (final epoch loss {})",
        a.out.display(),
        model.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Outcome {
    let params = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    emit(&evaluate(&params, &ds)?, a.out.as_deref())
}

fn run_crossval(a: CrossvalArgs) -> Outcome {
    let mut cfg = train_config(&a.train)?;
    set(&mut cfg.folds, a.folds);
    let ds = read_dataset(&a.data)?;
    let folds = cross_validate(&ds, &cfg)?;
    let doc = CrossValidationDoc {
        schema_version: CROSSVAL_SCHEMA_VERSION,
        config: cfg,
        summary: summarize_folds(&folds)?,
        folds,
    };
    eprintln!(
        "mean accuracy {:.2}% (std {:.2})",
        doc.summary.mean_accuracy, doc.summary.std_accuracy
    );
    emit(&doc, a.out.as_deref())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Outcome {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn render_eval(dir: &Path, r: &EvalReport) -> Outcome {
    write_text(dir, "confusion.csv", &confusion_csv(&r.confusion_matrix, &r.class_names))?;
    let title = format!("Confusion matrix, accuracy {:.2}%", r.accuracy);
    write_text(dir, "confusion.svg", &confusion_svg(&r.confusion_matrix, &r.class_names, &title))
}

fn run_report(a: ReportArgs) -> Outcome {
    let bytes = std::fs::read(&a.input)?;
    std::fs::create_dir_all(&a.out_dir)?;
    if bytes.starts_with(RECORDING_MAGIC) {
        let rec = read_rec(&a.input)?;
        let channels = if a.channels.is_empty() {
            rec.active_channels().into_iter().take(4).collect()
        } else {
            a.channels.clone()
        };
        write_text(&a.out_dir, "signals.csv", &signals_csv(&rec, &channels)?)?;
        let title = format!("{} ({} Hz)", a.input.display(), rec.sample_rate());
        return write_text(&a.out_dir, "signals.svg", &signals_svg(&rec, &channels, a.max_points, &title)?);
    }
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", a.input.display())))?;
    let parse_err = |e: serde_json::Error| Failure::Data(format!("{}: {e}", a.input.display()));
    if value.get("units").is_some() {
        let r: DecompositionReport = serde_json::from_value(value).map_err(parse_err)?;
        write_text(&a.out_dir, "units.csv", &units_csv(&r))?;
        write_text(&a.out_dir, "spikes.csv", &spikes_csv(&r))
    } else if value.get("summary").is_some() {
        let doc: CrossValidationDoc = serde_json::from_value(value).map_err(parse_err)?;
        render_eval(&a.out_dir, &doc.summary)
    } else if value.get("confusion_matrix").is_some() {
        let r: EvalReport = serde_json::from_value(value).map_err(parse_err)?;
        render_eval(&a.out_dir, &r)
    } else {
        Err(Failure::Data(format!(
            "{}: not a recording, decomposition report or evaluation report",
            a.input.display()
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(1),
                _ => {
                    eprintln!("\n{}", Cli::command().render_help());
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Filter(a) => run_filter(a),
        Command::Qc(a) => run_qc(a),
        Command::Decompose(a) => run_decompose(a),
        Command::Metrics(a) => run_metrics(a),
        Command::GestureSynth(a) => run_gesture_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Crossval(a) => run_crossval(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}\n\n{}", Cli::command().render_help());
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
