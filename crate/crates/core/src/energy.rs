//! Process energy measurement: total minus idle over the same duration,
//! repeated until a Student-t confidence interval is tight enough.
//!
//! Two meters are provided: [`RaplMeter`] reads the powercap counter files
//! exposed by Linux, and [`MockMeter`] simulates constant wattages on a
//! virtual clock so that measurements are exactly reproducible.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("meter unavailable: {0}")]
    Unavailable(String),
    #[error("invalid reading {reading} for counter range {max_range}")]
    InvalidReading { reading: f64, max_range: f64 },
    #[error("measurement window {secs:.3}s exceeds the {limit:.3}s the counter can cover without ambiguous wraparound")]
    TooLong { secs: f64, limit: f64 },
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("command `{cmd}` failed: {detail}")]
    CommandFailed { cmd: String, detail: String },
    #[error("confidence test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("relative bound must be positive, got {0}")]
    Beta(f64),
    #[error("sample mean {0} is not positive")]
    NonPositiveMean(f64),
    #[error("measurement lock {0} is held by another process")]
    Locked(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Something whose energy is being measured.
pub trait Workload {
    fn run(&mut self) -> Result<(), EnergyError>;

    /// Duration to charge on meters with a virtual clock. `None` means the
    /// wall time of [`Workload::run`] is used.
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }

    /// Command class, used by the mock meter to pick an active wattage.
    fn class(&self) -> &str {
        "default"
    }
}

pub trait EnergyMeter {
    fn name(&self) -> &str;
    /// Cumulative counter value in joules, wrapping at [`EnergyMeter::max_range`].
    fn read_joules(&mut self) -> Result<f64, EnergyError>;
    fn resolution(&self) -> f64;
    fn max_range(&self) -> f64;
    /// Seconds on the meter's clock.
    fn now(&self) -> f64;
    /// Runs the workload while the meter observes it.
    fn execute(&mut self, work: &mut dyn Workload) -> Result<(), EnergyError> {
        work.run()
    }
    /// Leaves the machine idle for `secs`.
    fn idle(&mut self, secs: f64) -> Result<(), EnergyError>;
    /// Longest window one reading pair can span without losing a wrap.
    fn max_window(&self) -> Option<f64> {
        None
    }
}

/// Energy between two readings of the same counter, corrected for one wrap.
pub fn read_energy_delta(max_range: f64, t0: f64, t1: f64) -> Result<f64, EnergyError> {
    for reading in [t0, t1] {
        if !(0.0..max_range).contains(&reading) {
            return Err(EnergyError::InvalidReading { reading, max_range });
        }
    }
    Ok(if t1 >= t0 { t1 - t0 } else { t1 + max_range - t0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiPolicy {
    pub alpha: f64,
    pub beta: f64,
    pub min_reps: usize,
    pub max_reps: usize,
}

impl Default for CiPolicy {
    fn default() -> Self {
        CiPolicy {
            alpha: 0.99,
            beta: 0.02,
            min_reps: 2,
            max_reps: 20,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Half-width `s · t_{1-(1-alpha)/2, m-1} / √m` of the two-sided interval.
pub fn ci_half_width(samples: &[f64], alpha: f64) -> Result<f64, EnergyError> {
    let m = samples.len();
    if m < 2 {
        return Err(EnergyError::TooFewSamples(m));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EnergyError::Alpha(alpha));
    }
    let mu = mean(samples);
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1) as f64;
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = StudentsT::new(0.0, 1.0, (m - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - alpha) / 2.0);
    Ok(var.sqrt() * t / (m as f64).sqrt())
}

/// True iff the interval half-width is within `beta` times the mean.
pub fn ci_test(samples: &[f64], alpha: f64, beta: f64) -> Result<bool, EnergyError> {
    if !(beta > 0.0) {
        return Err(EnergyError::Beta(beta));
    }
    let half = ci_half_width(samples, alpha)?;
    let mu = mean(samples);
    if mu <= 0.0 {
        return Err(EnergyError::NonPositiveMean(mu));
    }
    Ok(half <= beta * mu)
}

/// Idle power per duration bucket, reused until it expires.
#[derive(Clone, Debug)]
pub struct IdleCache {
    pub bucket_secs: f64,
    pub ttl_secs: f64,
    entries: HashMap<u64, (f64, f64)>,
}

impl IdleCache {
    pub fn new(bucket_secs: f64, ttl_secs: f64) -> Self {
        IdleCache {
            bucket_secs,
            ttl_secs,
            entries: HashMap::new(),
        }
    }

    fn idle_energy(&mut self, meter: &mut dyn EnergyMeter, secs: f64) -> Result<f64, EnergyError> {
        let bucket = (secs / self.bucket_secs).floor() as u64;
        let now = meter.now();
        if let Some(&(watts, at)) = self.entries.get(&bucket) {
            if now - at <= self.ttl_secs {
                return Ok(watts * secs);
            }
        }
        let joules = measure_idle_baseline(meter, secs)?;
        self.entries.insert(bucket, (joules / secs, meter.now()));
        Ok(joules)
    }
}

impl Default for IdleCache {
    fn default() -> Self {
        IdleCache::new(0.5, 600.0)
    }
}

/// Energy drawn while idle for `secs`.
pub fn measure_idle_baseline(meter: &mut dyn EnergyMeter, secs: f64) -> Result<f64, EnergyError> {
    if !(secs > 0.0) {
        return Err(EnergyError::Duration(secs));
    }
    let e0 = meter.read_joules()?;
    meter.idle(secs)?;
    let e1 = meter.read_joules()?;
    read_energy_delta(meter.max_range(), e0, e1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub e_total: f64,
    pub e_idle: f64,
    /// `e_total - e_idle`; may be negative under noise.
    pub e_net: f64,
    pub duration_s: f64,
    pub n_repetitions: usize,
    pub passed_ci: bool,
}

/// Runs `work` repeatedly, measuring total and idle energy over each run's
/// duration, until the net energies pass the confidence test or
/// `policy.max_reps` runs are done. Values are means over all runs.
pub fn measure_command(
    meter: &mut dyn EnergyMeter,
    work: &mut dyn Workload,
    policy: &CiPolicy,
    mut idle_cache: Option<&mut IdleCache>,
) -> Result<EnergyMeasurement, EnergyError> {
    let min_reps = policy.min_reps.max(2);
    let max_reps = policy.max_reps.max(min_reps);
    let (mut totals, mut idles, mut nets, mut durations) = (vec![], vec![], vec![], vec![]);
    let mut passed = false;
    while totals.len() < max_reps {
        let start = meter.now();
        let e0 = meter.read_joules()?;
        meter.execute(work)?;
        let e1 = meter.read_joules()?;
        let secs = meter.now() - start;
        if let Some(limit) = meter.max_window() {
            if secs > limit {
                return Err(EnergyError::TooLong { secs, limit });
            }
        }
        let total = read_energy_delta(meter.max_range(), e0, e1)?;
        let idle = if secs > 0.0 {
            match idle_cache.as_deref_mut() {
                Some(cache) => cache.idle_energy(meter, secs)?,
                None => measure_idle_baseline(meter, secs)?,
            }
        } else {
            0.0
        };
        totals.push(total);
        idles.push(idle);
        nets.push(total - idle);
        durations.push(secs);
        if nets.len() >= min_reps && ci_test(&nets, policy.alpha, policy.beta).unwrap_or(false) {
            passed = true;
            break;
        }
    }
    let (e_total, e_idle) = (mean(&totals), mean(&idles));
    let e_net = e_total - e_idle;
    if e_net < 0.0 {
        log::warn!("negative net energy {e_net:.6} J ({}): idle exceeded active draw", meter.name());
    }
    if !passed {
        log::warn!("confidence test not passed after {} repetitions", totals.len());
    }
    Ok(EnergyMeasurement {
        e_total,
        e_idle,
        e_net,
        duration_s: mean(&durations),
        n_repetitions: totals.len(),
        passed_ci: passed,
    })
}

/// An external command run to completion.
#[derive(Clone, Debug)]
pub struct CommandWorkload {
    pub argv: Vec<String>,
    pub class: String,
}

impl CommandWorkload {
    pub fn new(argv: Vec<String>) -> Self {
        CommandWorkload {
            argv,
            class: "default".into(),
        }
    }
}

impl Workload for CommandWorkload {
    fn run(&mut self) -> Result<(), EnergyError> {
        let (prog, args) = self.argv.split_first().ok_or_else(|| EnergyError::CommandFailed {
            cmd: String::new(),
            detail: "empty command".into(),
        })?;
        let out = Command::new(prog).args(args).output().map_err(|e| EnergyError::CommandFailed {
            cmd: self.argv.join(" "),
            detail: e.to_string(),
        })?;
        if !out.status.success() {
            return Err(EnergyError::CommandFailed {
                cmd: self.argv.join(" "),
                detail: format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
            });
        }
        Ok(())
    }

    fn class(&self) -> &str {
        &self.class
    }
}

/// In-process work given as a closure.
pub struct FnWorkload<F> {
    pub f: F,
    pub nominal: Option<f64>,
    pub class: String,
}

impl<F: FnMut() -> Result<(), EnergyError>> Workload for FnWorkload<F> {
    fn run(&mut self) -> Result<(), EnergyError> {
        (self.f)()
    }

    fn nominal_seconds(&self) -> Option<f64> {
        self.nominal
    }

    fn class(&self) -> &str {
        &self.class
    }
}

/// A workload that does nothing but declares a duration; for the mock meter.
#[derive(Clone, Debug)]
pub struct SimulatedWorkload {
    pub seconds: f64,
    pub class: String,
}

impl Workload for SimulatedWorkload {
    fn run(&mut self) -> Result<(), EnergyError> {
        Ok(())
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.seconds)
    }

    fn class(&self) -> &str {
        &self.class
    }
}

/// Linux powercap RAPL domain, e.g. `/sys/class/powercap/intel-rapl:0`.
#[derive(Debug)]
pub struct RaplMeter {
    domain: PathBuf,
    max_range: f64,
    max_power_watts: f64,
    epoch: Instant,
}

impl RaplMeter {
    pub const DEFAULT_DOMAIN: &'static str = "/sys/class/powercap/intel-rapl:0";

    pub fn open(domain: impl AsRef<Path>) -> Result<Self, EnergyError> {
        let domain = domain.as_ref().to_path_buf();
        let max_uj = read_uj(&domain.join("max_energy_range_uj"))?;
        let meter = RaplMeter {
            domain,
            max_range: max_uj / 1e6,
            max_power_watts: 500.0,
            epoch: Instant::now(),
        };
        // Fail early on unreadable counters (often root-only).
        read_uj(&meter.domain.join("energy_uj"))?;
        Ok(meter)
    }

    /// Upper bound on package power, used to bound the measurement window.
    pub fn with_max_power(mut self, watts: f64) -> Self {
        self.max_power_watts = watts;
        self
    }
}

fn read_uj(path: &Path) -> Result<f64, EnergyError> {
    let text = fs::read_to_string(path).map_err(|e| EnergyError::Unavailable(format!("{}: {e}", path.display())))?;
    text.trim()
        .parse::<u64>()
        .map(|v| v as f64)
        .map_err(|e| EnergyError::Unavailable(format!("{}: {e}", path.display())))
}

impl EnergyMeter for RaplMeter {
    fn name(&self) -> &str {
        "rapl"
    }

    fn read_joules(&mut self) -> Result<f64, EnergyError> {
        Ok(read_uj(&self.domain.join("energy_uj"))? / 1e6)
    }

    fn resolution(&self) -> f64 {
        1e-6
    }

    fn max_range(&self) -> f64 {
        self.max_range
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn idle(&mut self, secs: f64) -> Result<(), EnergyError> {
        std::thread::sleep(Duration::from_secs_f64(secs));
        Ok(())
    }

    fn max_window(&self) -> Option<f64> {
        Some(self.max_range / self.max_power_watts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockMeterConfig {
    pub idle_watts: f64,
    pub active_watts: f64,
    /// Active wattage per workload class, overriding `active_watts`.
    pub class_watts: HashMap<String, f64>,
    pub max_range_joules: f64,
}

impl Default for MockMeterConfig {
    fn default() -> Self {
        MockMeterConfig {
            idle_watts: 5.0,
            active_watts: 30.0,
            class_watts: HashMap::new(),
            max_range_joules: 262_143.328_850,
        }
    }
}

/// Deterministic meter with a virtual clock.
#[derive(Clone, Debug)]
pub struct MockMeter {
    cfg: MockMeterConfig,
    clock: f64,
    energy: f64,
    jitter: Vec<f64>,
    runs: usize,
}

impl MockMeter {
    pub fn new(cfg: MockMeterConfig) -> Self {
        MockMeter {
            cfg,
            clock: 0.0,
            energy: 0.0,
            jitter: Vec::new(),
            runs: 0,
        }
    }

    pub fn with_watts(active: f64, idle: f64) -> Self {
        MockMeter::new(MockMeterConfig {
            active_watts: active,
            idle_watts: idle,
            ..Default::default()
        })
    }

    /// Multiplies the active wattage of successive runs by these factors, cycling.
    pub fn with_jitter(mut self, factors: Vec<f64>) -> Self {
        self.jitter = factors;
        self
    }

    /// Starts the cumulative counter at `joules` (for wraparound scenarios).
    pub fn with_offset(mut self, joules: f64) -> Self {
        self.energy = joules;
        self
    }
}

impl EnergyMeter for MockMeter {
    fn name(&self) -> &str {
        "mock"
    }

    fn read_joules(&mut self) -> Result<f64, EnergyError> {
        Ok(self.energy % self.cfg.max_range_joules)
    }

    fn resolution(&self) -> f64 {
        0.0
    }

    fn max_range(&self) -> f64 {
        self.cfg.max_range_joules
    }

    fn now(&self) -> f64 {
        self.clock
    }

    fn execute(&mut self, work: &mut dyn Workload) -> Result<(), EnergyError> {
        let started = Instant::now();
        work.run()?;
        let secs = work.nominal_seconds().unwrap_or_else(|| started.elapsed().as_secs_f64());
        let watts = self.cfg.class_watts.get(work.class()).copied().unwrap_or(self.cfg.active_watts);
        let factor = if self.jitter.is_empty() {
            1.0
        } else {
            self.jitter[self.runs % self.jitter.len()]
        };
        self.runs += 1;
        self.energy += watts * factor * secs;
        self.clock += secs;
        Ok(())
    }

    fn idle(&mut self, secs: f64) -> Result<(), EnergyError> {
        self.energy += self.cfg.idle_watts * secs;
        self.clock += secs;
        Ok(())
    }
}

/// Exclusive-measurement lock file; removed on drop.
#[derive(Debug)]
pub struct MeasurementLock {
    path: PathBuf,
}

impl MeasurementLock {
    pub fn acquire(path: impl AsRef<Path>) -> Result<Self, EnergyError> {
        let path = path.as_ref().to_path_buf();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(MeasurementLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(EnergyError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for MeasurementLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
