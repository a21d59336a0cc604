use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use fpsel_core::bd::{bd_delta_with, BdMethod};
use fpsel_core::codec::{CodecError, CommandTemplate};
use fpsel_core::energy::{CommandWorkload, EnergyError};
use fpsel_core::features::{read_feature_csv, write_feature_csv, FeatureRow};
use fpsel_core::ml::EnsembleModel;
use fpsel_core::pipeline::{
    self, curve_data, labels_from_csv, labels_to_csv, policy_report, BdMetric, DeltaEReport, DeltaERow, MeasurementStore, PipelineError,
    PolicyReport, RunConfig,
};
use fpsel_core::quality::{mpsnr, psnr};
use fpsel_core::resample::downsample;
use fpsel_core::video::{self, FrameRate, SyntheticKind, SyntheticParams};

/// Energy-aware frame-rate selection: measurement, labelling, training and prediction.
#[derive(Parser)]
#[command(name = "fpsel", version)]
struct Cli {
    /// TOML run configuration (defaults apply to omitted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Temporally downsample a Y4M sequence by overlap-weighted averaging.
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fps_out: FrameRate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a test sequence against a reference; prints JSON.
    Quality {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// `mpsnr` accepts a lower-rate test sequence; `psnr` needs equal rates.
        #[arg(long, default_value = "mpsnr")]
        metric: String,
    },
    /// Extract the feature vector of each input at each CRF into a CSV.
    Features {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        /// Defaults to the configured CRF subset.
        #[arg(long)]
        crf: Vec<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure the net energy of a command; prints JSON.
    Measure {
        /// Command line to run, e.g. "x265 --input a.y4m -o a.bin".
        #[arg(long)]
        cmd_template: String,
        #[arg(long)]
        reps_max: Option<usize>,
        /// Workload class used by the mock meter's per-class wattage.
        #[arg(long, default_value = "default")]
        class: String,
    },
    /// Encode, decode and measure every (sequence, rate, CRF) cell missing from the store.
    PipelineMeasure {
        #[arg(long)]
        store: PathBuf,
        #[arg(required = true)]
        sequences: Vec<PathBuf>,
    },
    /// Select frame-rate policies and BD triplets per stored sequence.
    Label {
        #[arg(long)]
        store: PathBuf,
        /// Policy/BD report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-CRF ground-truth rates (`sequence,crf,fps`).
        #[arg(long)]
        labels: PathBuf,
    },
    /// Bjøntegaard delta of a test curve against a reference curve; prints JSON.
    Bd {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "rate")]
        metric: BdMetric,
        /// Use the cubic least-squares fit instead of PCHIP.
        #[arg(long)]
        cubic: bool,
    },
    /// Train the classifier and evaluate it; writes the model and an evaluation report.
    Train {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Evaluation report (JSON); a Markdown confusion matrix is written beside it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Recommend a frame rate for a sequence at a CRF.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        crf: u8,
    },
    /// Relative encoding energy of predicted-rate encoding versus native-rate encoding.
    DeltaE {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-sequence breakdown (JSON).
        #[arg(long)]
        detail: Option<PathBuf>,
        #[arg(required = true)]
        sequences: Vec<PathBuf>,
    },
    /// Render reports as Markdown and write energy-distortion curve data.
    Report {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Directory for per-sequence curve files.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Policy/BD report CSV to render.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Delta-E report CSV to render.
        #[arg(long)]
        delta_e: Option<PathBuf>,
    },
    /// Write a deterministic synthetic test sequence.
    Synth {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value = "120")]
        fps: FrameRate,
        #[arg(long, default_value_t = 1)]
        dx: i64,
        #[arg(long, default_value_t = 0)]
        dy: i64,
        #[arg(long, default_value_t = 100)]
        value: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            if e.is_subprocess() {
                return 3;
            }
            if matches!(e, PipelineError::Config(_)) {
                return 1;
            }
        }
        if matches!(cause.downcast_ref::<CodecError>(), Some(CodecError::Failed { .. }))
            || matches!(cause.downcast_ref::<EnergyError>(), Some(EnergyError::CommandFailed { .. }))
        {
            return 3;
        }
    }
    2
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Ok(RunConfig::default()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_video(path: &Path) -> Result<video::VideoSequence> {
    video::read_y4m(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_model(path: &Path) -> Result<EnsembleModel> {
    EnsembleModel::from_json(&read(path)?).map_err(|e| anyhow!("loading model {}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Cmd::Downsample { input, fps_out, out } => {
            let seq = read_video(&input)?;
            video::write_y4m(&downsample(&seq, fps_out)?, &out)?;
        }
        Cmd::Quality { reference, test, metric } => {
            let (r, t) = (read_video(&reference)?, read_video(&test)?);
            let score = match metric.as_str() {
                "mpsnr" => mpsnr(&r, &t)?,
                "psnr" => psnr(&r, &t)?,
                other => bail!(Usage(format!("unknown metric `{other}` (expected mpsnr or psnr)"))),
            };
            print_json(&score)?;
        }
        Cmd::Features { inputs, crf, out } => {
            let crfs = if crf.is_empty() { cfg.crf_subset.clone() } else { crf };
            let cfg = RunConfig { crf_subset: crfs, ..cfg };
            let rows: Vec<FeatureRow> = pipeline::pipeline_features(&cfg, &inputs)?;
            let mut buf = Vec::new();
            write_feature_csv(&mut buf, &rows)?;
            write(&out, std::str::from_utf8(&buf)?)?;
        }
        Cmd::Measure {
            cmd_template,
            reps_max,
            class,
        } => {
            let argv = CommandTemplate::new(&cmd_template)?.render(&Default::default())?;
            let mut cfg = cfg;
            if let Some(n) = reps_max {
                cfg.ci.max_reps = n;
            }
            let mut work = CommandWorkload { argv, class };
            print_json(&pipeline::measure_workload(&cfg, &mut work)?)?;
        }
        Cmd::PipelineMeasure { store, sequences } => {
            let mut store = MeasurementStore::open(&store)?;
            let summary = pipeline::pipeline_measure(&cfg, &sequences, &mut store)?;
            log::info!(
                "added {} rows, skipped {}, {} failures",
                summary.added,
                summary.skipped,
                summary.failures.len()
            );
            print_json(&summary)?;
            if !summary.failures.is_empty() {
                bail!(if summary.subprocess_failures > 0 {
                    PipelineError::Codec(CodecError::Failed {
                        cmd: "pipeline-measure".into(),
                        detail: format!("{} cells failed", summary.failures.len()),
                    })
                } else {
                    PipelineError::Data(format!("{} cells failed", summary.failures.len()))
                });
            }
        }
        Cmd::Label { store, out, labels } => {
            let store = MeasurementStore::open(&store)?;
            let selected = pipeline::pipeline_label(&cfg, &store)?;
            let report = policy_report(&cfg, &selected);
            write(&out, &report.to_csv())?;
            write(&labels, &labels_to_csv(&selected))?;
            print!("{}", report.to_markdown());
        }
        Cmd::Bd {
            reference,
            test,
            metric,
            cubic,
        } => {
            let r = pipeline::read_rd_csv(&read(&reference)?, metric)?;
            let t = pipeline::read_rd_csv(&read(&test)?, metric)?;
            let method = if cubic { BdMethod::Cubic } else { BdMethod::Pchip };
            print_json(&bd_delta_with(&r, &t, method)?)?;
        }
        Cmd::Train {
            labels,
            features,
            model,
            report,
        } => {
            let labels = labels_from_csv(&read(&labels)?)?;
            let features = read_feature_csv(read(&features)?.as_bytes())?;
            let data = pipeline::build_dataset(&labels, &features)?;
            let (trained, evaluation) = pipeline::pipeline_train(&cfg, &data)?;
            write(&model, &trained.to_json())?;
            write(&report, &(serde_json::to_string_pretty(&evaluation)? + "\n"))?;
            write(&report.with_extension("md"), &evaluation.confusion_markdown())?;
            println!("accuracy {:.4}", evaluation.evaluation.accuracy);
        }
        Cmd::Predict { model, input, crf } => {
            let model = load_model(&model)?;
            let seq = read_video(&input)?;
            println!("{}", pipeline::predict_frame_rate(&model, &seq, crf, &cfg.features)?);
        }
        Cmd::DeltaE {
            store,
            model,
            out,
            detail,
            sequences,
        } => {
            let store = MeasurementStore::open(&store)?;
            let model = load_model(&model)?;
            let details = sequences
                .iter()
                .map(|s| pipeline::delta_e_select(&cfg, &store, &model, s))
                .collect::<Result<Vec<_>, _>>()?;
            let report = DeltaEReport::new(
                details
                    .iter()
                    .map(|d| DeltaERow {
                        sequence: d.sequence.clone(),
                        delta_e_percent: d.delta_e_percent,
                    })
                    .collect(),
            );
            write(&out, &report.to_csv())?;
            if let Some(path) = detail {
                write(&path, &(serde_json::to_string_pretty(&details)? + "\n"))?;
            }
            print!("{}", report.to_markdown());
        }
        Cmd::Report {
            store,
            curves,
            policy,
            delta_e,
        } => {
            if policy.is_none() && delta_e.is_none() && curves.is_none() {
                bail!(Usage("nothing to report: give --policy, --delta-e or --store with --curves".into()));
            }
            if let Some(p) = policy {
                print!("{}", PolicyReport::from_csv(&read(&p)?)?.to_markdown());
            }
            if let Some(p) = delta_e {
                print!("{}", DeltaEReport::from_csv(&read(&p)?)?.to_markdown());
            }
            if let Some(dir) = curves {
                let Some(store) = store else {
                    bail!(Usage("--curves needs --store".into()));
                };
                let store = MeasurementStore::open(&store)?;
                for seq in store.sequences() {
                    write(&dir.join(format!("{seq}.dat")), &curve_data(&store, &seq, cfg.energy_axis)?)?;
                }
            }
        }
        Cmd::Synth {
            kind,
            out,
            width,
            height,
            frames,
            fps,
            dx,
            dy,
            value,
            seed,
        } => {
            let kind: SyntheticKind = serde_json::from_value(serde_json::Value::String(kind.clone())).map_err(|_| {
                Usage(format!(
                    "unknown kind `{kind}` (constant, global_translation, local_motion, dynamic_texture)"
                ))
            })?;
            let params = SyntheticParams {
                width,
                height,
                frames,
                frame_rate: fps,
                dx,
                dy,
                value,
                seed,
            };
            video::write_y4m(&video::generate_synthetic(kind, &params)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
