//! `se3diffreg` command-line front end.
//!
//! Exit status: 0 on success, 1 when a run fails, 2 for usage and
//! configuration errors.

mod args;
mod config;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use se3_diffreg::bench::{run_bench, BenchConfig};
use se3_diffreg::data::{generate_pair, load_cloud, load_manifest, save_pair, GenSpec};
use se3_diffreg::forward::{diffuse, DiffusionConfig, PerturbSide};
use se3_diffreg::metrics::fmt_sig;
use se3_diffreg::reverse::{run_inference, InferenceInput, ReverseConfig, Trajectory};
use se3_diffreg::seeding::{rng_from_seed, stream_rng};
use se3_diffreg::{make_schedule, Error, RigidTransform, SurrogateKind};

use args::{BenchArgs, Cli, Command, DiffuseArgs, GenArgs, RegisterArgs, ScheduleArgs, Settings};
use config::FileConfig;

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidStepCount(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    // `Cli::parse` prints help/version with status 0 and usage errors with 2.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        cur = s.source();
    }
    msg
}

fn run(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, &file),
        Command::Schedule(a) => cmd_schedule(&a),
        Command::Diffuse(a) => cmd_diffuse(&a, &file),
        Command::Register(a) => cmd_register(&a, &file),
        Command::Bench(a) => cmd_bench(&a, &file),
    }
}

fn resolve(file: &FileConfig, overrides: &args::Overrides) -> Result<Settings, Failure> {
    Settings::resolve(file, overrides).map_err(Failure::Usage)
}

/// Standard output unless a path is given.
fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_gen(a: &GenArgs, file: &FileConfig) -> CmdResult {
    let seed = a
        .seed
        .seed
        .or(file.seed)
        .unwrap_or(se3_diffreg::bench::DEFAULT_SEED);
    let spec = GenSpec {
        shape: a.shape,
        n_source: a.n_source,
        n_model: a.n_model,
        max_rot: a.max_rot,
        max_trans: a.max_trans,
        partial_fraction: a.partial,
        noise_sigma: a.noise,
        occlusion_patches: a.occlusions,
        seed,
    };
    spec.validate()?;
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    fs::create_dir_all(&a.out_dir)?;
    let width = (a.n - 1).to_string().len().max(4);
    let mut ids = Vec::with_capacity(a.n);
    for i in 0..a.n {
        let id = format!("pair_{i:0width$}");
        let mut rng = stream_rng(seed, &id, 0);
        let pair = generate_pair(&spec, &id, &mut rng)?;
        save_pair(&pair, a.out_dir.join(format!("{id}.json")))?;
        ids.push(id);
    }
    let mut index = ids.join("\n");
    index.push('\n');
    fs::write(a.out_dir.join(se3_diffreg::bench::INDEX_FILE), index)?;
    eprintln!("wrote {} pairs to {}", a.n, a.out_dir.display());
    Ok(())
}

fn cmd_schedule(a: &ScheduleArgs) -> CmdResult {
    let mut sched = make_schedule(a.kind, a.steps)?;
    if let Some(k) = a.respace {
        sched = sched.respace(k)?;
    }
    let out = output(a.out.as_deref())?;
    sched.write_csv(out)?;
    Ok(())
}

fn load_truth(path: &Path) -> Result<(RigidTransform, Option<Vec<usize>>), Failure> {
    let manifest = load_manifest(path)?;
    let h0 = RigidTransform::from_row_major(&manifest.h0).ok_or_else(|| {
        Failure::Runtime(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "h0 is not a rigid transform".into(),
        })
    })?;
    Ok((h0, manifest.correspondences))
}

fn cmd_diffuse(a: &DiffuseArgs, file: &FileConfig) -> CmdResult {
    let s = resolve(file, &a.overrides())?;
    let (h0, _) = load_truth(&a.pair)?;
    let mut cfg = DiffusionConfig::new(make_schedule(s.schedule, s.steps)?, s.gamma, s.seed);
    cfg.gamma_rot = a.gamma_rot;
    cfg.gamma_trans = a.gamma_trans;
    cfg.side = if a.right {
        PerturbSide::Right
    } else {
        PerturbSide::Left
    };
    cfg.tangent = s.tangent;
    cfg.validate()?;

    let mut rng = rng_from_seed(s.seed);
    let mut out = output(a.out.as_deref())?;
    write!(out, "t,angle,trans_norm")?;
    for r in 0..3 {
        for c in 0..4 {
            write!(out, ",m{r}{c}")?;
        }
    }
    writeln!(out)?;
    write_chain_row(&mut out, 0, &h0)?;
    for t in 1..=s.steps {
        let ht = diffuse(&cfg, &h0, t, &mut rng)?;
        write_chain_row(&mut out, t, &ht)?;
    }
    out.flush()?;
    Ok(())
}

fn write_chain_row(out: &mut dyn Write, t: usize, h: &RigidTransform) -> io::Result<()> {
    write!(
        out,
        "{t},{},{}",
        fmt_sig(h.rotation.angle(), 9),
        fmt_sig(h.translation.norm(), 9)
    )?;
    for v in &h.to_row_major()[..12] {
        write!(out, ",{}", fmt_sig(*v, 9))?;
    }
    writeln!(out)
}

fn cmd_register(a: &RegisterArgs, file: &FileConfig) -> CmdResult {
    let s = resolve(file, &a.overrides())?;
    s.surrogate.validate()?;
    let source = load_cloud(&a.source)?;
    let model = load_cloud(&a.model)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;

    let mut input = InferenceInput::new(&source, &model);
    if let Some((h0, corr)) = &truth {
        input.truth = Some(h0);
        input.correspondences = corr.as_deref();
    }
    match s.surrogate {
        SurrogateKind::NoisyOracle { .. } if input.truth.is_none() => {
            return Err(Failure::Usage("the oracle surrogate needs --truth".into()))
        }
        SurrogateKind::KabschKnownCorrespondence if input.correspondences.is_none() => {
            return Err(Failure::Usage(
                "the kabsch surrogate needs --truth with correspondences".into(),
            ))
        }
        _ => {}
    }

    let schedule = make_schedule(s.schedule, s.steps)?;
    if s.infer_steps == 0 || s.infer_steps > s.steps {
        return Err(Failure::Usage(format!(
            "--infer-steps must lie in 1..={}",
            s.steps
        )));
    }
    let mut cfg = ReverseConfig::new(schedule.respace(s.infer_steps)?, s.surrogate.clone());
    cfg.mode = s.mode;
    cfg.seed = s.seed;
    cfg.tangent = s.tangent;
    cfg.record_trajectory = a.trace.is_some();

    let mut rng = rng_from_seed(s.seed);
    let (h, trajectory) = match run_inference(&cfg, &input, &mut rng) {
        Ok(out) => out,
        Err(Error::StepFailure {
            step,
            source,
            trajectory,
        }) => {
            if let Some(path) = &a.trace {
                write_trace(&trajectory, fs::File::create(path)?)?;
            }
            return Err(Failure::Runtime(Error::StepFailure {
                step,
                source,
                trajectory,
            }));
        }
        Err(e) => return Err(e.into()),
    };

    let mut out = io::stdout().lock();
    let m = h.to_matrix();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| fmt_sig(m[(r, c)], 12)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    if let Some((h0, _)) = &truth {
        let err = se3_diffreg::metrics::PoseError::between(&h, h0);
        eprintln!(
            "re_deg={} te={}",
            fmt_sig(err.re_deg(), 6),
            fmt_sig(err.te, 6)
        );
    }
    if let Some(path) = &a.trace {
        write_trace(&trajectory, fs::File::create(path)?)?;
    }
    Ok(())
}

/// Error columns are left empty when no ground truth was supplied.
fn write_trace<W: Write>(trajectory: &Trajectory, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "step_index,t,re_deg,te,residual")?;
    for step in &trajectory.steps {
        let (re, te) = match &step.error {
            Some(e) => (fmt_sig(e.re_deg(), 9), fmt_sig(e.te, 9)),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{re},{te},{}",
            step.k,
            step.t,
            fmt_sig(step.residual, 9)
        )?;
    }
    out.flush()
}

fn bench_config(a: &BenchArgs, s: &Settings) -> BenchConfig {
    let mut cfg = BenchConfig::new(&a.dataset, s.surrogate.clone());
    cfg.methods = s.methods.clone();
    cfg.schedule = s.schedule;
    cfg.steps = s.steps;
    cfg.gamma = s.gamma;
    cfg.infer_steps = s.infer_steps;
    cfg.mode = s.mode;
    cfg.tangent = s.tangent;
    cfg.seed = s.seed;
    cfg.repeats = s.repeats;
    cfg.workers = s.workers;
    cfg.rows_out = a.out.clone();
    cfg.map_out = a.map_out.clone();
    cfg.timing_out = a.timing_out.clone();
    cfg
}

fn print_settings(s: &Settings, out: &mut dyn Write) -> io::Result<()> {
    let methods: Vec<&str> = s.methods.iter().map(|m| m.tag()).collect();
    writeln!(out, "schedule = {:?}", s.schedule)?;
    writeln!(out, "steps = {}", s.steps)?;
    writeln!(out, "gamma = {}", s.gamma)?;
    writeln!(out, "infer_steps = {}", s.infer_steps)?;
    writeln!(out, "mode = {:?}", s.mode)?;
    writeln!(out, "seed = {}", s.seed)?;
    writeln!(out, "tangent = {:?}", s.tangent)?;
    writeln!(out, "surrogate = {:?}", s.surrogate)?;
    writeln!(out, "repeats = {}", s.repeats)?;
    match s.workers {
        Some(n) => writeln!(out, "workers = {n}")?,
        None => writeln!(out, "workers = auto")?,
    }
    writeln!(out, "methods = {}", methods.join(","))
}

fn cmd_bench(a: &BenchArgs, file: &FileConfig) -> CmdResult {
    let s = resolve(file, &a.overrides())?;
    if a.print_config {
        print_settings(&s, &mut io::stdout().lock())?;
        return Ok(());
    }
    let cfg = bench_config(a, &s);
    cfg.validate()?;
    if !cfg.dataset_dir.is_dir() {
        return Err(Failure::Runtime(Error::MissingFile(
            cfg.dataset_dir.clone(),
        )));
    }
    let outcome = run_bench(&cfg)?;

    let failed = outcome.rows.iter().filter(|r| r.error.is_some()).count();
    let mut out = io::stdout().lock();
    for (method, report) in &outcome.reports {
        writeln!(out, "[{}]", method.tag())?;
        write!(out, "{report}")?;
    }
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", outcome.rows.len());
    }
    Ok(())
}
