//! Batch evaluation over a dataset directory.
//!
//! A dataset is a directory with an `index.txt` listing pair ids, one per
//! line, and a `<id>.json` manifest per pair. Every pair is run through each
//! configured method; rows come back in index order no matter how the worker
//! pool schedules them.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_pair, RegistrationPair};
use crate::error::{Error, Result};
use crate::lie::TangentMap;
use crate::metrics::{fmt_sig, map_summary, MapReport, PoseError, Thresholds};
use crate::reverse::{run_inference, InferenceInput, InferenceMode, ReverseConfig};
use crate::schedule::{make_schedule, ScheduleKind};
use crate::seeding::stream_rng;
use crate::surrogate::{single_shot_baseline, SurrogateKind};

pub const INDEX_FILE: &str = "index.txt";

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_INFER_STEPS: usize = 5;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One direct surrogate call, no diffusion.
    SingleShot,
    /// The reverse diffusion chain with `infer_steps` steps.
    Reverse,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::SingleShot => "single_shot",
            Method::Reverse => "reverse",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single_shot" => Ok(Method::SingleShot),
            "reverse" => Ok(Method::Reverse),
            other => Err(format!(
                "unknown method `{other}` (expected single_shot or reverse)"
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub dataset_dir: PathBuf,
    pub methods: Vec<Method>,
    pub surrogate: SurrogateKind,
    pub schedule: ScheduleKind,
    /// Length `T` of the full schedule.
    pub steps: usize,
    /// Forward perturbation scale. Inference does not use it; it is carried
    /// so a bench configuration fully describes the diffusion setup.
    pub gamma: f64,
    pub infer_steps: usize,
    pub mode: InferenceMode,
    pub tangent: TangentMap,
    pub seed: u64,
    pub repeats: usize,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub thresholds: Thresholds,
    pub rows_out: Option<PathBuf>,
    pub map_out: Option<PathBuf>,
    pub timing_out: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(dataset_dir: impl Into<PathBuf>, surrogate: SurrogateKind) -> Self {
        BenchConfig {
            dataset_dir: dataset_dir.into(),
            methods: vec![Method::SingleShot, Method::Reverse],
            surrogate,
            schedule: ScheduleKind::Cosine,
            steps: DEFAULT_STEPS,
            gamma: DEFAULT_GAMMA,
            infer_steps: DEFAULT_INFER_STEPS,
            mode: InferenceMode::Deterministic,
            tangent: TangentMap::Coupled,
            seed: DEFAULT_SEED,
            repeats: 1,
            workers: None,
            thresholds: Thresholds::default(),
            rows_out: None,
            map_out: None,
            timing_out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("diffusion steps must be at least 1".into()));
        }
        if self.infer_steps < 1 || self.infer_steps > self.steps {
            return Err(Error::Config(format!(
                "inference steps must lie in 1..={}, got {}",
                self.steps, self.infer_steps
            )));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be positive".into()));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Config("gamma must be non-negative".into()));
        }
        self.surrogate.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub pair_id: String,
    pub method: Method,
    pub repeat: usize,
    /// NaN when the run failed.
    pub re_deg: f64,
    pub te: f64,
    pub steps_used: usize,
    pub wall_ms: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub reports: Vec<(Method, MapReport)>,
}

pub fn read_index(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.clone())
        } else {
            Error::Io(e)
        }
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<RegistrationPair>> {
    read_index(dir)?
        .iter()
        .map(|id| load_pair(dir.join(format!("{id}.json"))))
        .collect()
}

/// Loads the dataset, evaluates it and writes whichever outputs are configured.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let pairs = load_dataset(&cfg.dataset_dir)?;
    let outcome = evaluate_pairs(cfg, &pairs)?;
    if let Some(path) = &cfg.rows_out {
        write_rows_csv(&outcome.rows, BufWriter::new(fs::File::create(path)?))?;
    }
    if let Some(path) = &cfg.map_out {
        write_map_csv(&outcome.reports, BufWriter::new(fs::File::create(path)?))?;
    }
    if let Some(path) = &cfg.timing_out {
        write_timing_csv(&outcome.rows, BufWriter::new(fs::File::create(path)?))?;
    }
    Ok(outcome)
}

/// Evaluates in-memory pairs; the core of [`run_bench`].
pub fn evaluate_pairs(cfg: &BenchConfig, pairs: &[RegistrationPair]) -> Result<BenchOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let mut reverse_cfg = ReverseConfig::new(
        make_schedule(cfg.schedule, cfg.steps)?.respace(cfg.infer_steps)?,
        cfg.surrogate.clone(),
    );
    reverse_cfg.mode = cfg.mode;
    reverse_cfg.tangent = cfg.tangent;
    reverse_cfg.seed = cfg.seed;
    reverse_cfg.record_trajectory = false;

    let work = || -> Vec<BenchRow> {
        pairs
            .par_iter()
            .flat_map_iter(|pair| {
                let reverse_cfg = &reverse_cfg;
                (0..cfg.repeats).flat_map(move |repeat| {
                    cfg.methods
                        .iter()
                        .map(move |&method| evaluate_one(cfg, reverse_cfg, pair, method, repeat))
                })
            })
            .collect()
    };
    let rows = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let errors: Vec<PoseError> = rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| PoseError {
                re: r.re_deg.to_radians(),
                te: r.te,
            })
            .collect();
        reports.push((method, map_summary(&errors, &cfg.thresholds)?));
    }
    Ok(BenchOutcome { rows, reports })
}

fn evaluate_one(
    cfg: &BenchConfig,
    reverse_cfg: &ReverseConfig,
    pair: &RegistrationPair,
    method: Method,
    repeat: usize,
) -> BenchRow {
    let stream = (repeat as u64) << 8 | method as u64;
    let mut rng = stream_rng(cfg.seed, &pair.id, stream);
    let start = Instant::now();
    let outcome = match method {
        Method::SingleShot => {
            single_shot_baseline(&cfg.surrogate, pair, &mut rng).map(|r| (r.h, 1, r.converged))
        }
        Method::Reverse => run_inference(reverse_cfg, &InferenceInput::from_pair(pair), &mut rng)
            .map(|(h, _)| (h, cfg.infer_steps, true)),
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((h, steps_used, converged)) => {
            let err = PoseError::between(&h, &pair.h0);
            BenchRow {
                pair_id: pair.id.clone(),
                method,
                repeat,
                re_deg: err.re_deg(),
                te: err.te,
                steps_used,
                wall_ms,
                converged,
                error: None,
            }
        }
        Err(e) => BenchRow {
            pair_id: pair.id.clone(),
            method,
            repeat,
            re_deg: f64::NAN,
            te: f64::NAN,
            steps_used: match &e {
                Error::StepFailure { step, .. } => cfg.infer_steps - step,
                _ => 0,
            },
            wall_ms,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Deterministic per-row results (no timing).
pub fn write_rows_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pair_id,method,repeat,re_deg,te,steps_used,converged")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.pair_id,
            r.method.tag(),
            r.repeat,
            fmt_sig(r.re_deg, 9),
            fmt_sig(r.te, 9),
            r.steps_used,
            r.converged
        )?;
    }
    out.flush()
}

pub fn write_timing_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pair_id,method,repeat,wall_ms")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.pair_id,
            r.method.tag(),
            r.repeat,
            fmt_sig(r.wall_ms, 9)
        )?;
    }
    out.flush()
}

pub fn write_map_csv<W: Write>(reports: &[(Method, MapReport)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "method,threshold,axis,fraction")?;
    for (method, rep) in reports {
        for (t, f) in rep.thresholds_rot.iter().zip(&rep.map_rot) {
            writeln!(
                out,
                "{},{},rotation_deg,{}",
                method.tag(),
                fmt_sig(*t, 9),
                fmt_sig(*f, 9)
            )?;
        }
        for (t, f) in rep.thresholds_trans.iter().zip(&rep.map_trans) {
            writeln!(
                out,
                "{},{},translation,{}",
                method.tag(),
                fmt_sig(*t, 9),
                fmt_sig(*f, 9)
            )?;
        }
    }
    out.flush()
}
