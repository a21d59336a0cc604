//! End-to-end orchestration: measurement grid, ground-truth labels, feature
//! extraction, classifier training, prediction and energy accounting.

pub mod report;
pub mod store;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bd::{bd_triplet, BdError, BdTriplet, RdCurve};
use crate::codec::{Codec, CodecError, CommandTemplate, EncodeResult, MockCost};
use crate::energy::{
    measure_command, CiPolicy, EnergyError, EnergyMeasurement, EnergyMeter, FnWorkload, IdleCache, MeasurementLock, MockMeter,
    MockMeterConfig, RaplMeter, Workload,
};
use crate::features::{extract_feature_vector, FeatureConfig, FeatureError, FeatureRow, FeatureVector};
use crate::ml::{self, Dataset, EnsembleModel, EvalParams, Evaluation, MlError, TrainParams, CLASSES, N_CLASSES};
use crate::pareto::{build_curves, pareto_front_indices, select_policy, EnergyAxis, FrameRatePolicy, ParetoError};
use crate::quality::{mpsnr, QualityError};
use crate::resample::{downsample, ResampleError};
use crate::video::{self, FrameRate, SequenceInfo, VideoError, VideoSequence};

pub use report::{DeltaEReport, DeltaERow, PolicyReport, PolicyRow};
pub use store::{CellFailure, MeasurementStore, StoreRow};

/// Environment variable overriding the configured meter (`mock` or `rapl`).
pub const METER_ENV: &str = "FPSEL_METER";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error(transparent)]
    Bd(#[from] BdError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// True when an external process (encoder, decoder, measured command) failed.
    pub fn is_subprocess(&self) -> bool {
        matches!(
            self,
            PipelineError::Codec(CodecError::Failed { .. }) | PipelineError::Energy(EnergyError::CommandFailed { .. })
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterKind {
    #[default]
    Mock,
    Rapl,
}

impl std::str::FromStr for MeterKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(MeterKind::Mock),
            "rapl" => Ok(MeterKind::Rapl),
            other => Err(PipelineError::Config(format!("unknown meter `{other}` (expected mock or rapl)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeterConfig {
    pub kind: MeterKind,
    pub mock: MockMeterConfig,
    pub rapl_domain: PathBuf,
    pub rapl_max_power_watts: f64,
    pub lock_path: PathBuf,
    pub idle_cache: bool,
    pub idle_bucket_secs: f64,
    pub idle_ttl_secs: f64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            kind: MeterKind::Mock,
            mock: MockMeterConfig::default(),
            rapl_domain: PathBuf::from(RaplMeter::DEFAULT_DOMAIN),
            rapl_max_power_watts: 500.0,
            lock_path: std::env::temp_dir().join("fpsel-measure.lock"),
            idle_cache: true,
            idle_bucket_secs: 0.5,
            idle_ttl_secs: 600.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Frame-rate ladder, highest (native) first.
    pub ladder: Vec<FrameRate>,
    pub crf_grid: Vec<u8>,
    /// CRFs the policy is defined on.
    pub crf_subset: Vec<u8>,
    pub energy_axis: EnergyAxis,
    pub codec: Codec,
    pub meter: MeterConfig,
    pub ci: CiPolicy,
    pub mock_cost: MockCost,
    pub features: FeatureConfig,
    pub train: TrainParams,
    pub eval: EvalParams,
    /// Directory for resampled sources, bitstreams and decoded output.
    pub work_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ladder: [120u64, 100, 60, 50, 40, 30, 25, 24, 15].map(FrameRate::integer).to_vec(),
            crf_grid: (0..=51).step_by(3).collect(),
            crf_subset: vec![18, 23, 28, 33],
            energy_axis: EnergyAxis::Enc,
            codec: Codec::Command {
                encode: CommandTemplate::new(
                    "ffmpeg -y -loglevel error -i {input} -c:v libx265 -crf {crf} -x265-params log-level=error {output}",
                )
                .expect("valid default"),
                decode: CommandTemplate::new("ffmpeg -y -loglevel error -i {input} -f yuv4mpegpipe -strict -1 {output}")
                    .expect("valid default"),
            },
            meter: MeterConfig::default(),
            ci: CiPolicy::default(),
            mock_cost: MockCost::default(),
            features: FeatureConfig::default(),
            train: TrainParams::default(),
            eval: EvalParams::default(),
            work_dir: PathBuf::from("work"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        RunConfig::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.ladder.is_empty() || self.crf_subset.is_empty() {
            return Err(PipelineError::Config("ladder and crf_subset must be non-empty".into()));
        }
        if !self.ladder.windows(2).all(|w| w[0] > w[1]) {
            return Err(PipelineError::Config("ladder must be strictly descending".into()));
        }
        if let Some(c) = self.measured_crfs().into_iter().find(|&c| c > crate::codec::MAX_CRF) {
            return Err(PipelineError::Config(format!("crf {c} outside 0..=51")));
        }
        if !self.crf_subset.windows(2).all(|w| w[0] < w[1]) {
            return Err(PipelineError::Config("crf_subset must be strictly ascending".into()));
        }
        Ok(())
    }

    pub fn native_rate(&self) -> FrameRate {
        self.ladder[0]
    }

    /// CRFs encoded per frame rate: the grid plus the policy subset.
    pub fn measured_crfs(&self) -> Vec<u8> {
        self.crf_grid
            .iter()
            .chain(&self.crf_subset)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Meter kind after applying the environment override.
    pub fn meter_kind(&self) -> Result<MeterKind, PipelineError> {
        match std::env::var(METER_ENV) {
            Ok(v) if !v.is_empty() => v.parse(),
            _ => Ok(self.meter.kind),
        }
    }

    /// Short digest of everything that affects measured values.
    pub fn config_hash(&self) -> Result<String, PipelineError> {
        let canonical = serde_json::json!({
            "ladder": self.ladder,
            "crfs": self.measured_crfs(),
            "codec": self.codec,
            "meter": self.meter_kind()?,
            "mock": self.meter.mock,
            "ci": self.ci,
            "mock_cost": self.mock_cost,
        });
        let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
        Ok(hex::encode(&digest[..8]))
    }

    fn open_meter(&self, kind: MeterKind) -> Result<Box<dyn EnergyMeter + Send>, PipelineError> {
        Ok(match kind {
            MeterKind::Mock => Box::new(MockMeter::new(self.meter.mock.clone())),
            MeterKind::Rapl => Box::new(RaplMeter::open(&self.meter.rapl_domain)?.with_max_power(self.meter.rapl_max_power_watts)),
        })
    }

    fn idle_cache(&self) -> Option<IdleCache> {
        self.meter
            .idle_cache
            .then(|| IdleCache::new(self.meter.idle_bucket_secs, self.meter.idle_ttl_secs))
    }
}

/// Meter plus idle cache and, for hardware meters, the exclusivity lock.
struct MeterSession {
    meter: Box<dyn EnergyMeter + Send>,
    cache: Option<IdleCache>,
    _lock: Option<MeasurementLock>,
}

impl MeterSession {
    fn open(cfg: &RunConfig, kind: MeterKind) -> Result<Self, PipelineError> {
        let lock = match kind {
            MeterKind::Rapl => Some(MeasurementLock::acquire(&cfg.meter.lock_path)?),
            MeterKind::Mock => None,
        };
        Ok(MeterSession {
            meter: cfg.open_meter(kind)?,
            cache: cfg.idle_cache(),
            _lock: lock,
        })
    }

    fn measure(&mut self, ci: &CiPolicy, work: &mut dyn Workload) -> Result<EnergyMeasurement, PipelineError> {
        Ok(measure_command(self.meter.as_mut(), work, ci, self.cache.as_mut())?)
    }
}

/// Measures one workload with the configured meter, idle cache and lock.
pub fn measure_workload(cfg: &RunConfig, work: &mut dyn Workload) -> Result<EnergyMeasurement, PipelineError> {
    MeterSession::open(cfg, cfg.meter_kind()?)?.measure(&cfg.ci, work)
}

/// Which metric of a stored point a BD delta is taken on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdMetric {
    Rate,
    Enc,
    Dec,
}

impl BdMetric {
    pub fn column(&self) -> &'static str {
        match self {
            BdMetric::Rate => "bitrate_kbps",
            BdMetric::Enc => "e_enc_j",
            BdMetric::Dec => "e_dec_j",
        }
    }
}

impl std::str::FromStr for BdMetric {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate" => Ok(BdMetric::Rate),
            "enc" => Ok(BdMetric::Enc),
            "dec" => Ok(BdMetric::Dec),
            other => Err(PipelineError::Config(format!(
                "unknown metric `{other}` (expected rate, enc or dec)"
            ))),
        }
    }
}

/// Reads `(mpsnr_db, metric)` pairs from any CSV with an `mpsnr_db` column and
/// the metric's column (store files qualify).
pub fn read_rd_csv(text: &str, metric: BdMetric) -> Result<RdCurve, PipelineError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PipelineError::Data(format!("missing column `{name}`")))
    };
    let (qi, mi) = (col("mpsnr_db")?, col(metric.column())?);
    let mut points = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| PipelineError::Data(format!("bad number `{}`", &rec[i])))
        };
        points.push((num(qi)?, num(mi)?));
    }
    Ok(RdCurve::new(points))
}

pub fn sequence_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn rate_tag(f: FrameRate) -> String {
    f.to_string().replace('/', "_")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub added: usize,
    pub skipped: usize,
    pub failures: Vec<CellFailure>,
    /// Failures caused by an encoder, decoder or measured command.
    pub subprocess_failures: usize,
}

struct Cell {
    f: FrameRate,
    crf: u8,
    input: PathBuf,
    info: SequenceInfo,
}

fn measure_cell(
    cfg: &RunConfig,
    session: &mut MeterSession,
    source: &VideoSequence,
    dir: &Path,
    cell: &Cell,
    hash: &str,
) -> Result<StoreRow, PipelineError> {
    let stem = format!("{}fps_crf{}", rate_tag(cell.f), cell.crf);
    let bitstream = dir.join(format!("{stem}.bin"));
    let decoded = dir.join(format!("{stem}_dec.y4m"));

    let mut enc = cfg
        .codec
        .encode_job(&cell.input, &bitstream, cell.crf, &cell.info)?
        .with_nominal_seconds(cfg.mock_cost.encode_seconds(&cell.info, cell.crf));
    let e_enc = session.measure(&cfg.ci, &mut enc)?;
    let result = EncodeResult::from_output(&bitstream, &cell.info, cell.crf, e_enc.duration_s)?;
    result.write_sidecar()?;

    let mut dec = cfg
        .codec
        .decode_job(&bitstream, &decoded, &cell.info)?
        .with_nominal_seconds(cfg.mock_cost.decode_seconds(&cell.info));
    let e_dec = session.measure(&cfg.ci, &mut dec)?;

    let quality = mpsnr(source, &video::read_y4m(&decoded)?)?;
    Ok(StoreRow {
        sequence: source.name.clone(),
        f: cell.f,
        crf: cell.crf,
        mpsnr_db: quality.value_db,
        bitrate_kbps: result.bitrate_kbps,
        e_enc_j: e_enc.e_net,
        e_dec_j: e_dec.e_net,
        config_hash: hash.to_string(),
    })
}

/// Downsample, encode, decode and score every missing (sequence, rate, CRF)
/// cell, appending to `store`. Failed cells are reported and skipped.
pub fn pipeline_measure(cfg: &RunConfig, sequences: &[PathBuf], store: &mut MeasurementStore) -> Result<MeasureSummary, PipelineError> {
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    store.check_hash(&hash)?;
    let kind = cfg.meter_kind()?;
    let crfs = cfg.measured_crfs();
    let mut summary = MeasureSummary::default();
    let mut shared = match kind {
        MeterKind::Rapl => Some(MeterSession::open(cfg, kind)?),
        MeterKind::Mock => None,
    };

    for path in sequences {
        let source = video::read_y4m(path)?;
        let name = source.name.clone();
        if source.frame_rate != cfg.native_rate() {
            let error = format!(
                "source rate {} differs from native ladder rate {}",
                source.frame_rate,
                cfg.native_rate()
            );
            summary.failures.extend(cfg.ladder.iter().flat_map(|&f| {
                crfs.iter().map({
                    let (name, error) = (name.clone(), error.clone());
                    move |&crf| CellFailure {
                        sequence: name.clone(),
                        f,
                        crf,
                        error: error.clone(),
                    }
                })
            }));
            continue;
        }
        let dir = cfg.work_dir.join(&name);
        fs::create_dir_all(&dir)?;
        let mut cells = Vec::new();
        for &f in &cfg.ladder {
            let pending: Vec<u8> = crfs.iter().copied().filter(|&c| !store.contains(&name, f, c)).collect();
            summary.skipped += crfs.len() - pending.len();
            if pending.is_empty() {
                continue;
            }
            let input = dir.join(format!("{}fps.y4m", rate_tag(f)));
            let resampled = downsample(&source, f)?;
            video::write_y4m(&resampled, &input)?;
            let info = resampled.info();
            cells.extend(pending.into_iter().map(|crf| Cell {
                f,
                crf,
                input: input.clone(),
                info,
            }));
        }

        let results: Vec<Result<StoreRow, PipelineError>> = match shared.as_mut() {
            Some(session) => cells.iter().map(|c| measure_cell(cfg, session, &source, &dir, c, &hash)).collect(),
            // The mock meter is a pure function of its inputs, so cells can run in parallel.
            None => cells
                .par_iter()
                .map(|c| {
                    let mut session = MeterSession::open(cfg, kind)?;
                    measure_cell(cfg, &mut session, &source, &dir, c, &hash)
                })
                .collect(),
        };
        let mut rows = Vec::new();
        for (cell, res) in cells.iter().zip(results) {
            match res {
                Ok(row) => rows.push(row),
                Err(e) => {
                    summary.subprocess_failures += e.is_subprocess() as usize;
                    log::error!("{name} {} fps crf {}: {e}", cell.f, cell.crf);
                    summary.failures.push(CellFailure {
                        sequence: name.clone(),
                        f: cell.f,
                        crf: cell.crf,
                        error: e.to_string(),
                    });
                }
            }
        }
        summary.added += store.append(rows)?;
    }

    if !store.path().as_os_str().is_empty() {
        let mut failures_path = store.path().as_os_str().to_owned();
        failures_path.push(".failures.csv");
        store::append_failures(Path::new(&failures_path), &summary.failures)?;
        let mut meta_path = store.path().as_os_str().to_owned();
        meta_path.push(".meta.json");
        let host = fs::read_to_string("/etc/hostname")
            .map(|h| h.trim().to_string())
            .unwrap_or_default();
        let meta = serde_json::json!({
            "meter": kind,
            "host": host,
            "config_hash": hash,
            "codec": cfg.codec.name(),
            "ladder": cfg.ladder,
            "crfs": crfs,
        });
        fs::write(Path::new(&meta_path), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    Ok(summary)
}

/// Ground truth for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLabel {
    pub sequence: String,
    pub policy: FrameRatePolicy,
    pub bd: BdTriplet,
}

/// Frame-rate policy and BD triplet per stored sequence.
pub fn pipeline_label(cfg: &RunConfig, store: &MeasurementStore) -> Result<Vec<SequenceLabel>, PipelineError> {
    let ladder: BTreeSet<FrameRate> = cfg.ladder.iter().copied().collect();
    store
        .sequences()
        .into_iter()
        .map(|sequence| {
            let points: Vec<_> = store.points(&sequence).into_iter().filter(|p| ladder.contains(&p.fps)).collect();
            let policy =
                select_policy(&points, &cfg.crf_subset, cfg.energy_axis).map_err(|e| PipelineError::Data(format!("{sequence}: {e}")))?;
            if !policy.is_non_increasing() {
                log::info!("{sequence}: policy {policy} is not monotone in CRF");
            }
            let bd = bd_triplet(&points, cfg.native_rate(), &policy).map_err(|e| PipelineError::Data(format!("{sequence}: {e}")))?;
            Ok(SequenceLabel { sequence, policy, bd })
        })
        .collect()
}

pub fn policy_report(cfg: &RunConfig, labels: &[SequenceLabel]) -> PolicyReport {
    PolicyReport::new(
        labels
            .iter()
            .map(|l| PolicyRow {
                sequence: l.sequence.clone(),
                policy: l.policy.to_string(),
                bdr: l.bd.bdr,
                bdee: l.bd.bdee,
                bdde: l.bd.bdde,
                downsampled: l.policy.rates().iter().any(|&f| f != cfg.native_rate()),
            })
            .collect(),
    )
}

/// `sequence,crf,fps` rows of the selected rates.
pub fn labels_to_csv(labels: &[SequenceLabel]) -> String {
    let mut s = String::from("sequence,crf,fps\n");
    for l in labels {
        for (crf, f) in &l.policy.entries {
            writeln!(s, "{},{crf},{f}", l.sequence).unwrap();
        }
    }
    s
}

pub fn labels_from_csv(text: &str) -> Result<Vec<(String, u8, FrameRate)>, PipelineError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.deserialize::<(String, u8, FrameRate)>()
        .map(|r| r.map_err(PipelineError::from))
        .collect()
}

/// Feature rows for every sequence, one per policy CRF (features are
/// CRF-independent apart from the CRF column itself).
pub fn pipeline_features(cfg: &RunConfig, sequences: &[PathBuf]) -> Result<Vec<FeatureRow>, PipelineError> {
    let mut rows = Vec::new();
    for path in sequences {
        let seq = video::read_y4m(path)?;
        let base = extract_feature_vector(&seq, cfg.crf_subset[0], &cfg.features)?;
        for &crf in &cfg.crf_subset {
            rows.push(FeatureRow {
                sequence: seq.name.clone(),
                features: base.with_crf(crf)?,
            });
        }
    }
    Ok(rows)
}

pub fn build_dataset(labels: &[(String, u8, FrameRate)], features: &[FeatureRow]) -> Result<Dataset, PipelineError> {
    let mut data = Dataset {
        feature_names: FeatureVector::NAMES.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    for (sequence, crf, f) in labels {
        let row = features
            .iter()
            .find(|r| &r.sequence == sequence && r.features.crf == *crf)
            .ok_or_else(|| PipelineError::Data(format!("no features for {sequence} at crf {crf}")))?;
        data.rows.push(row.features.to_vec());
        data.labels.push(ml::class_index(*f)?);
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_samples: usize,
    pub selected_features: Vec<String>,
    pub class_order: Vec<u32>,
    pub evaluation: Evaluation,
}

impl TrainReport {
    pub fn confusion_markdown(&self) -> String {
        let mut s = String::from("| truth \\ predicted |");
        for c in CLASSES {
            write!(s, " {c} |").unwrap();
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(N_CLASSES));
        s.push('\n');
        for (k, row) in self.evaluation.confusion.iter().enumerate() {
            write!(s, "| {} |", CLASSES[k]).unwrap();
            for v in row {
                write!(s, " {v} |").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Fits the deployable model on all rows and evaluates the protocol.
pub fn pipeline_train(cfg: &RunConfig, data: &Dataset) -> Result<(EnsembleModel, TrainReport), PipelineError> {
    let model = ml::train(data, &cfg.train)?;
    let evaluation = ml::evaluate(data, &cfg.train, &cfg.eval)?;
    let report = TrainReport {
        n_samples: data.len(),
        selected_features: model.selected.iter().map(|&i| model.feature_names[i].clone()).collect(),
        class_order: CLASSES.to_vec(),
        evaluation,
    };
    Ok((model, report))
}

pub fn predict_frame_rate(model: &EnsembleModel, seq: &VideoSequence, crf: u8, cfg: &FeatureConfig) -> Result<FrameRate, PipelineError> {
    let fv = extract_feature_vector(seq, crf, cfg)?;
    Ok(ml::class_rate(model.predict_full(&fv.to_vec())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEDetail {
    pub sequence: String,
    /// Predicted rate per policy CRF.
    pub predicted: FrameRatePolicy,
    pub e_features_j: f64,
    pub e_classify_j: f64,
    pub e_selected_j: f64,
    pub e_native_j: f64,
    pub delta_e_percent: f64,
}

/// Relative encoding energy of the selection pipeline (feature extraction
/// once, one classification per CRF, encoding at the predicted rates) versus
/// encoding every CRF at the native rate.
pub fn delta_e_select(
    cfg: &RunConfig,
    store: &MeasurementStore,
    model: &EnsembleModel,
    source: &Path,
) -> Result<DeltaEDetail, PipelineError> {
    let seq = video::read_y4m(source)?;
    let info = seq.info();
    let mut session = MeterSession::open(cfg, cfg.meter_kind()?)?;

    let mut base = None;
    let e_feat = {
        let mut work = FnWorkload {
            f: || {
                let fv = extract_feature_vector(&seq, cfg.crf_subset[0], &cfg.features).map_err(|e| EnergyError::CommandFailed {
                    cmd: "feature extraction".into(),
                    detail: e.to_string(),
                })?;
                base = Some(fv);
                Ok(())
            },
            nominal: Some(cfg.mock_cost.feature_seconds(&info)),
            class: "features".into(),
        };
        session.measure(&cfg.ci, &mut work)?.e_net
    };
    let base = base.expect("feature workload ran");

    let (mut e_cls, mut e_sel, mut e_nat) = (0.0, 0.0, 0.0);
    let mut entries = Vec::new();
    for &crf in &cfg.crf_subset {
        let x = base.with_crf(crf)?.to_vec();
        let mut predicted = None;
        let mut work = FnWorkload {
            f: || {
                predicted = Some(model.predict_full(&x).map_err(|e| EnergyError::CommandFailed {
                    cmd: "classification".into(),
                    detail: e.to_string(),
                })?);
                Ok(())
            },
            nominal: Some(cfg.mock_cost.classify_s),
            class: "classify".into(),
        };
        e_cls += session.measure(&cfg.ci, &mut work)?.e_net;
        let f = ml::class_rate(predicted.expect("classifier ran"));
        let cell = |f: FrameRate| {
            store
                .get(&seq.name, f, crf)
                .map(|r| r.e_enc_j)
                .ok_or_else(|| PipelineError::Data(format!("no measurement for {} at {f} fps, crf {crf}", seq.name)))
        };
        e_sel += cell(f)?;
        e_nat += cell(cfg.native_rate())?;
        entries.push((crf, f));
    }
    let e_a = e_feat + e_cls + e_sel;
    Ok(DeltaEDetail {
        sequence: seq.name.clone(),
        predicted: FrameRatePolicy { entries },
        e_features_j: e_feat,
        e_classify_j: e_cls,
        e_selected_j: e_sel,
        e_native_j: e_nat,
        delta_e_percent: 100.0 * (e_a - e_nat) / e_nat,
    })
}

/// Gnuplot-ready energy-distortion curves of one sequence: one block per
/// frame rate (separated by two blank lines), columns
/// `fps crf mpsnr_db bitrate_kbps e_enc_j e_dec_j pareto`.
pub fn curve_data(store: &MeasurementStore, sequence: &str, axis: EnergyAxis) -> Result<String, PipelineError> {
    let points = store.points(sequence);
    let front: BTreeSet<(FrameRate, u8)> = pareto_front_indices(&points, axis)
        .into_iter()
        .map(|i| (points[i].fps, points[i].crf))
        .collect();
    let mut s = format!("# {sequence}\n# fps crf mpsnr_db bitrate_kbps e_enc_j e_dec_j pareto\n");
    for (i, (f, curve)) in build_curves(&points)?.into_iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        for p in curve {
            writeln!(
                s,
                "{f} {} {} {} {} {} {}",
                p.crf,
                p.mpsnr_db,
                p.bitrate_kbps,
                p.e_enc_j,
                p.e_dec_j,
                front.contains(&(p.fps, p.crf)) as u8
            )
            .unwrap();
        }
    }
    Ok(s)
}
