use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use se3_diffreg::bench::{Method, DEFAULT_GAMMA, DEFAULT_INFER_STEPS, DEFAULT_SEED, DEFAULT_STEPS};
use se3_diffreg::data::Shape;
use se3_diffreg::reverse::InferenceMode;
use se3_diffreg::{ScheduleKind, SurrogateKind, TangentMap};

use crate::config::{FileConfig, SurrogateChoice};

pub const SEED_ENV: &str = "SE3DIFFREG_SEED";

pub const DEFAULT_SURROGATE: SurrogateChoice = SurrogateChoice::Icp;
pub const DEFAULT_ICP_ITERS: usize = 50;
pub const DEFAULT_TRIM: f64 = 0.1;
pub const DEFAULT_ICP_TOL: f64 = 1e-9;
pub const DEFAULT_ORACLE_ROT_SIGMA: f64 = 0.05;
pub const DEFAULT_ORACLE_TRANS_SIGMA: f64 = 0.01;

/// SE(3) diffusion point-cloud registration.
#[derive(Debug, Parser)]
#[command(name = "se3diffreg", version, propagate_version = true)]
pub struct Cli {
    /// TOML file supplying defaults for diffusion, inference and surrogate options.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of registration pairs.
    Gen(GenArgs),
    /// Dump the coefficients of a noise schedule as CSV.
    Schedule(ScheduleArgs),
    /// Sample the forward chain H_1..H_T for one pair.
    Diffuse(DiffuseArgs),
    /// Register a source cloud to a model cloud with the reverse process.
    Register(RegisterArgs),
    /// Evaluate methods over a dataset and report mAP.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Base seed [env: SE3DIFFREG_SEED] [default: 7].
    #[arg(long, env = SEED_ENV, hide_env = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScheduleOpts {
    /// Noise schedule [default: cosine].
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    /// Diffusion steps T [default: 200].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Use the SO(3) x R^3 exponential instead of the coupled SE(3) one.
    #[arg(long)]
    pub decoupled_exp: bool,
}

#[derive(Debug, Args)]
pub struct InferenceOpts {
    /// Respaced inference steps K [default: 5].
    #[arg(long)]
    pub infer_steps: Option<usize>,
    /// deterministic or random [default: deterministic].
    #[arg(long)]
    pub mode: Option<InferenceMode>,
}

#[derive(Debug, Args)]
pub struct SurrogateOpts {
    /// Registration model used inside each step [default: icp].
    #[arg(long, value_enum)]
    pub surrogate: Option<SurrogateChoice>,
    /// ICP iteration cap [default: 50].
    #[arg(long)]
    pub icp_iters: Option<usize>,
    /// Fraction of worst ICP matches discarded [default: 0.1].
    #[arg(long)]
    pub trim: Option<f64>,
    /// ICP convergence threshold on the update twist [default: 1e-9].
    #[arg(long)]
    pub icp_tol: Option<f64>,
    /// Oracle rotation noise in radians [default: 0.05].
    #[arg(long)]
    pub oracle_rot_sigma: Option<f64>,
    /// Oracle translation noise [default: 0.01].
    #[arg(long)]
    pub oracle_trans_sigma: Option<f64>,
    /// Scale oracle noise by the current misalignment.
    #[arg(long)]
    pub oracle_scaled: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "torus")]
    pub shape: Shape,
    /// Number of pairs.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 512)]
    pub n_source: usize,
    #[arg(long, default_value_t = 1024)]
    pub n_model: usize,
    /// Largest ground-truth rotation angle, radians.
    #[arg(long, default_value_t = 2.0)]
    pub max_rot: f64,
    #[arg(long, default_value_t = 0.3)]
    pub max_trans: f64,
    /// Fraction of the model visible from the source viewpoint.
    #[arg(long, default_value_t = 0.6)]
    pub partial: f64,
    /// Gaussian noise added to source points.
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    /// Number of spherical occlusion patches cut from the source.
    #[arg(long, default_value_t = 0)]
    pub occlusions: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value = "cosine")]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    /// Respace to this many steps before writing.
    #[arg(long)]
    pub respace: Option<usize>,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffuseArgs {
    /// Pair manifest supplying H0.
    #[arg(long)]
    pub pair: PathBuf,
    /// Perturbation scale [default: 0.1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Separate scale for the rotational noise components.
    #[arg(long)]
    pub gamma_rot: Option<f64>,
    /// Separate scale for the translational noise components.
    #[arg(long)]
    pub gamma_trans: Option<f64>,
    /// Compose the perturbation on the right of the interpolated pose.
    #[arg(long)]
    pub right: bool,
    #[command(flatten)]
    pub schedule: ScheduleOpts,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Pair manifest with the ground truth (and correspondences, if any).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write the per-step trajectory as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleOpts,
    #[command(flatten)]
    pub inference: InferenceOpts,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset directory containing index.txt and pair manifests.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated methods: single_shot, reverse [default: both].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Forward perturbation scale recorded with the run [default: 0.1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Runs per pair and method [default: 1].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Per-pair results CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// mAP CSV.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
    /// Per-row wall-clock timings CSV.
    #[arg(long)]
    pub timing_out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub schedule: ScheduleOpts,
    #[command(flatten)]
    pub inference: InferenceOpts,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// Options after merging flags, the config file and defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub gamma: f64,
    pub infer_steps: usize,
    pub mode: InferenceMode,
    pub seed: u64,
    pub tangent: TangentMap,
    pub surrogate: SurrogateKind,
    pub repeats: usize,
    pub workers: Option<usize>,
    pub methods: Vec<Method>,
}

impl Settings {
    #[cfg(test)]
    pub fn defaults() -> Self {
        Settings::resolve(&FileConfig::default(), &Overrides::default())
            .expect("built-in defaults are valid")
    }

    pub fn resolve(file: &FileConfig, cli: &Overrides) -> Result<Self, String> {
        let methods = match (&cli.methods, &file.methods) {
            (Some(m), _) => m.clone(),
            (None, Some(names)) => names
                .iter()
                .map(|n| n.parse::<Method>())
                .collect::<Result<_, _>>()?,
            (None, None) => vec![Method::SingleShot, Method::Reverse],
        };
        let choice = cli
            .surrogate
            .or(file.surrogate)
            .unwrap_or(DEFAULT_SURROGATE);
        let surrogate = match choice {
            SurrogateChoice::Kabsch => SurrogateKind::KabschKnownCorrespondence,
            SurrogateChoice::Icp => SurrogateKind::TrimmedIcp {
                max_iters: cli
                    .icp_iters
                    .or(file.icp_iters)
                    .unwrap_or(DEFAULT_ICP_ITERS),
                trim_fraction: cli.trim.or(file.trim).unwrap_or(DEFAULT_TRIM),
                tol: cli.icp_tol.or(file.icp_tol).unwrap_or(DEFAULT_ICP_TOL),
            },
            SurrogateChoice::Oracle => SurrogateKind::NoisyOracle {
                rot_sigma_rad: cli
                    .oracle_rot_sigma
                    .or(file.oracle_rot_sigma)
                    .unwrap_or(DEFAULT_ORACLE_ROT_SIGMA),
                trans_sigma: cli
                    .oracle_trans_sigma
                    .or(file.oracle_trans_sigma)
                    .unwrap_or(DEFAULT_ORACLE_TRANS_SIGMA),
                error_scales_with_misalignment: cli.oracle_scaled
                    || file.oracle_scaled.unwrap_or(false),
            },
        };
        let decoupled = cli.decoupled_exp || file.decoupled_exp.unwrap_or(false);
        Ok(Settings {
            schedule: cli.schedule.or(file.schedule).unwrap_or_default(),
            steps: cli.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
            gamma: cli.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA),
            infer_steps: cli
                .infer_steps
                .or(file.infer_steps)
                .unwrap_or(DEFAULT_INFER_STEPS),
            mode: cli.mode.or(file.mode).unwrap_or_default(),
            seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            tangent: if decoupled {
                TangentMap::Decoupled
            } else {
                TangentMap::Coupled
            },
            surrogate,
            repeats: cli.repeats.or(file.repeats).unwrap_or(1),
            workers: cli.workers.or(file.workers),
            methods,
        })
    }
}

/// Values given on the command line; `None` / `false` defers to the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub schedule: Option<ScheduleKind>,
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub infer_steps: Option<usize>,
    pub mode: Option<InferenceMode>,
    pub seed: Option<u64>,
    pub decoupled_exp: bool,
    pub surrogate: Option<SurrogateChoice>,
    pub icp_iters: Option<usize>,
    pub trim: Option<f64>,
    pub icp_tol: Option<f64>,
    pub oracle_rot_sigma: Option<f64>,
    pub oracle_trans_sigma: Option<f64>,
    pub oracle_scaled: bool,
    pub repeats: Option<usize>,
    pub workers: Option<usize>,
    pub methods: Option<Vec<Method>>,
}

impl Overrides {
    pub fn with_schedule(mut self, o: &ScheduleOpts) -> Self {
        self.schedule = o.schedule;
        self.steps = o.steps;
        self.decoupled_exp = o.decoupled_exp;
        self
    }

    pub fn with_inference(mut self, o: &InferenceOpts) -> Self {
        self.infer_steps = o.infer_steps;
        self.mode = o.mode;
        self
    }

    pub fn with_surrogate(mut self, o: &SurrogateOpts) -> Self {
        self.surrogate = o.surrogate;
        self.icp_iters = o.icp_iters;
        self.trim = o.trim;
        self.icp_tol = o.icp_tol;
        self.oracle_rot_sigma = o.oracle_rot_sigma;
        self.oracle_trans_sigma = o.oracle_trans_sigma;
        self.oracle_scaled = o.oracle_scaled;
        self
    }

    pub fn with_seed(mut self, s: &SeedArg) -> Self {
        self.seed = s.seed;
        self
    }
}

impl BenchArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            gamma: self.gamma,
            repeats: self.repeats,
            workers: self.workers,
            methods: self.methods.clone(),
            ..Overrides::default()
        }
        .with_schedule(&self.schedule)
        .with_inference(&self.inference)
        .with_surrogate(&self.surrogate)
        .with_seed(&self.seed)
    }
}

impl RegisterArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::default()
            .with_schedule(&self.schedule)
            .with_inference(&self.inference)
            .with_surrogate(&self.surrogate)
            .with_seed(&self.seed)
    }
}

impl DiffuseArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            gamma: self.gamma,
            ..Overrides::default()
        }
        .with_schedule(&self.schedule)
        .with_seed(&self.seed)
    }
}
