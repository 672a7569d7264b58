//! Noise schedules and the per-step diffusion coefficients derived from them.
//!
//! Steps are 1-based throughout: `t = 1..=T`. By convention `ᾱ_0 = 1`, so the
//! first step always has `λ0 = 1`, `λ1 = 0` and `β̃ = 0`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fmt_sig;

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    #[default]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(format!(
                "unknown schedule `{other}` (expected linear or cosine)"
            )),
        }
    }
}

/// Coefficients of a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub beta: f64,
    pub alpha_bar: f64,
    pub beta_tilde: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    /// Step of the originating full-length schedule for each entry.
    timesteps: Vec<usize>,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
    lambda0: Vec<f64>,
    lambda1: Vec<f64>,
}

/// Builds a `T`-step schedule of the given kind.
pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<Schedule> {
    if steps < 1 {
        return Err(Error::InvalidStepCount(steps));
    }
    let beta = match kind {
        ScheduleKind::Linear => linear_betas(steps, LINEAR_BETA_START, LINEAR_BETA_END),
        ScheduleKind::Cosine => cosine_betas(steps, COSINE_OFFSET, COSINE_MAX_BETA),
    };
    Ok(Schedule::from_betas(kind, beta))
}

fn linear_betas(steps: usize, start: f64, end: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    let span = (steps - 1) as f64;
    (0..steps)
        .map(|i| start + (end - start) * i as f64 / span)
        .collect()
}

fn cosine_betas(steps: usize, offset: f64, max_beta: f64) -> Vec<f64> {
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + offset) / (1.0 + offset)) * PI * 0.5;
        x.cos().powi(2)
    };
    (1..=steps)
        .map(|t| (1.0 - f(t) / f(t - 1)).min(max_beta))
        .collect()
}

impl Schedule {
    /// Builds a schedule from raw `β_t`; `ᾱ` is the running product of `1 − β`.
    pub fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Schedule {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let timesteps = (1..=beta.len()).collect();
        Self::assemble(kind, timesteps, beta, alpha, alpha_bar)
    }

    fn assemble(
        kind: ScheduleKind,
        timesteps: Vec<usize>,
        beta: Vec<f64>,
        alpha: Vec<f64>,
        alpha_bar: Vec<f64>,
    ) -> Schedule {
        let n = beta.len();
        let mut beta_tilde = Vec::with_capacity(n);
        let mut lambda0 = Vec::with_capacity(n);
        let mut lambda1 = Vec::with_capacity(n);
        for i in 0..n {
            if i == 0 {
                beta_tilde.push(0.0);
                lambda0.push(1.0);
                lambda1.push(0.0);
                continue;
            }
            let prev = alpha_bar[i - 1];
            let denom = 1.0 - alpha_bar[i];
            beta_tilde.push((1.0 - prev) / denom * beta[i]);
            lambda0.push(prev.sqrt() * beta[i] / denom);
            lambda1.push(alpha[i].sqrt() * (1.0 - prev) / denom);
        }
        Schedule {
            kind,
            timesteps,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
            lambda0,
            lambda1,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_tilde(&self) -> &[f64] {
        &self.beta_tilde
    }

    pub fn lambda0(&self) -> &[f64] {
        &self.lambda0
    }

    pub fn lambda1(&self) -> &[f64] {
        &self.lambda1
    }

    /// Original (pre-respacing) step index of each entry.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                max: self.steps(),
            });
        }
        Ok(t - 1)
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bar[self.check(t)?])
    }

    pub fn coefficients_at(&self, t: usize) -> Result<StepCoefficients> {
        let i = self.check(t)?;
        Ok(StepCoefficients {
            beta: self.beta[i],
            alpha_bar: self.alpha_bar[i],
            beta_tilde: self.beta_tilde[i],
            lambda0: self.lambda0[i],
            lambda1: self.lambda1[i],
        })
    }

    /// Steps `⌊k T / K⌋` for `k = 1..=K`: uniformly spaced, always ending at `T`.
    pub fn respaced_indices(&self, k: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if k < 1 || k > t {
            return Err(Error::InvalidStepCount(k));
        }
        Ok((1..=k).map(|j| j * t / k).collect())
    }

    /// A `K`-step schedule on a uniform subset of the steps. `ᾱ` is looked up
    /// at the kept steps and every other coefficient is recomputed from it.
    pub fn respace(&self, k: usize) -> Result<Schedule> {
        let idx = self.respaced_indices(k)?;
        let mut beta = Vec::with_capacity(k);
        let mut alpha = Vec::with_capacity(k);
        let mut alpha_bar = Vec::with_capacity(k);
        let mut timesteps = Vec::with_capacity(k);
        let mut prev = 0;
        for &t in &idx {
            let i = t - 1;
            if t - prev == 1 {
                // A one-step span is the original transition.
                beta.push(self.beta[i]);
                alpha.push(self.alpha[i]);
            } else {
                let a = self.alpha_bar[i] / self.alpha_bar_at(prev)?;
                beta.push(1.0 - a);
                alpha.push(a);
            }
            alpha_bar.push(self.alpha_bar[i]);
            timesteps.push(self.timesteps[i]);
            prev = t;
        }
        Ok(Self::assemble(self.kind, timesteps, beta, alpha, alpha_bar))
    }

    /// CSV with header `t,beta,alpha_bar,beta_tilde,lambda0,lambda1`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,beta,alpha_bar,beta_tilde,lambda0,lambda1")?;
        for i in 0..self.steps() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.timesteps[i],
                fmt_sig(self.beta[i], 9),
                fmt_sig(self.alpha_bar[i], 9),
                fmt_sig(self.beta_tilde[i], 9),
                fmt_sig(self.lambda0[i], 9),
                fmt_sig(self.lambda1[i], 9),
            )?;
        }
        Ok(())
    }
}
