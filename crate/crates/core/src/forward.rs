//! Forward diffusion on SE(3).
//!
//! A ground-truth pose `H0` is pulled toward the identity by geodesic
//! interpolation with weight `√ᾱ_t` and then perturbed by
//! `Exp(γ √(1 − ᾱ_t) ε)`, `ε ~ N(0, I_6)` in the tangent space.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{PointCloud, RegistrationPair};
use crate::error::{Error, Result};
use crate::lie::{interpolate_with, RigidTransform, TangentMap, Twist};
use crate::schedule::Schedule;

/// Scaled perturbations with `‖rho‖` at or above `PI - PERTURBATION_MARGIN` are re-drawn.
pub const PERTURBATION_MARGIN: f64 = 1e-3;
pub const MAX_REDRAWS: usize = 8;

/// Which side of the interpolated pose the perturbation multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PerturbSide {
    #[default]
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct DiffusionConfig {
    pub schedule: Schedule,
    pub gamma: f64,
    /// Overrides `gamma` for the rotational twist components.
    pub gamma_rot: Option<f64>,
    /// Overrides `gamma` for the translational twist components.
    pub gamma_trans: Option<f64>,
    pub side: PerturbSide,
    pub tangent: TangentMap,
    pub seed: u64,
}

impl DiffusionConfig {
    pub fn new(schedule: Schedule, gamma: f64, seed: u64) -> Self {
        DiffusionConfig {
            schedule,
            gamma,
            gamma_rot: None,
            gamma_trans: None,
            side: PerturbSide::Left,
            tangent: TangentMap::Coupled,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gammas = [Some(self.gamma), self.gamma_rot, self.gamma_trans];
        if gammas.iter().flatten().any(|g| g.is_nan() || *g < 0.0) {
            return Err(Error::Config(
                "perturbation scale must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn scales(&self) -> (f64, f64) {
        (
            self.gamma_rot.unwrap_or(self.gamma),
            self.gamma_trans.unwrap_or(self.gamma),
        )
    }
}

/// One training sample: the diffused source, the model, and the relative
/// transform a registration model should predict.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingEpisode {
    pub t: usize,
    pub xt_cloud: PointCloud,
    pub model_cloud: PointCloud,
    pub h_t: RigidTransform,
    /// `H0 H_t⁻¹`.
    pub target: RigidTransform,
}

pub fn standard_normal_twist<R: Rng + ?Sized>(rng: &mut R) -> Twist {
    let mut v = [0.0; 6];
    for x in &mut v {
        *x = StandardNormal.sample(rng);
    }
    Twist::new(
        Vector3::new(v[0], v[1], v[2]),
        Vector3::new(v[3], v[4], v[5]),
    )
}

/// The tangent-space perturbation `γ √(1 − ᾱ_t) ε` for a given `ε`.
pub fn perturbation_twist(cfg: &DiffusionConfig, t: usize, eps: &Twist) -> Result<Twist> {
    let scale = (1.0 - cfg.schedule.coefficients_at(t)?.alpha_bar).sqrt();
    let (g_rot, g_trans) = cfg.scales();
    Ok(Twist::new(
        eps.rho * (g_rot * scale),
        eps.nu * (g_trans * scale),
    ))
}

/// Draws `Exp(γ √(1 − ᾱ_t) ε)`, re-drawing `ε` while the rotational part
/// lands too close to the cut locus.
pub fn sample_perturbation<R: Rng + ?Sized>(
    cfg: &DiffusionConfig,
    t: usize,
    rng: &mut R,
) -> Result<RigidTransform> {
    sample_perturbation_twist(cfg, t, rng).map(|xi| cfg.tangent.exp(&xi))
}

fn sample_perturbation_twist<R: Rng + ?Sized>(
    cfg: &DiffusionConfig,
    t: usize,
    rng: &mut R,
) -> Result<Twist> {
    cfg.schedule.coefficients_at(t)?;
    for _ in 0..=MAX_REDRAWS {
        let xi = perturbation_twist(cfg, t, &standard_normal_twist(rng))?;
        if xi.rho.norm() < PI - PERTURBATION_MARGIN {
            return Ok(xi);
        }
    }
    Err(Error::PerturbationResampleExceeded {
        attempts: MAX_REDRAWS + 1,
    })
}

/// Samples `H_t ~ q(H_t | H0)`.
pub fn diffuse<R: Rng + ?Sized>(
    cfg: &DiffusionConfig,
    h0: &RigidTransform,
    t: usize,
    rng: &mut R,
) -> Result<RigidTransform> {
    let xi = sample_perturbation_twist(cfg, t, rng)?;
    combine(cfg, h0, t, &cfg.tangent.exp(&xi))
}

/// [`diffuse`] with a fixed perturbation `ε` (no re-draw).
pub fn diffuse_with_noise(
    cfg: &DiffusionConfig,
    h0: &RigidTransform,
    t: usize,
    eps: &Twist,
) -> Result<RigidTransform> {
    let p = cfg.tangent.exp(&perturbation_twist(cfg, t, eps)?);
    combine(cfg, h0, t, &p)
}

fn combine(
    cfg: &DiffusionConfig,
    h0: &RigidTransform,
    t: usize,
    perturbation: &RigidTransform,
) -> Result<RigidTransform> {
    let weight = cfg.schedule.coefficients_at(t)?.alpha_bar.sqrt();
    let interpolated = interpolate_with(cfg.tangent, weight, h0)?;
    Ok(match cfg.side {
        PerturbSide::Left => perturbation.compose(&interpolated),
        PerturbSide::Right => interpolated.compose(perturbation),
    })
}

/// Draws `t ~ Uniform{1..T}` and builds the corresponding episode.
pub fn make_episode<R: Rng + ?Sized>(
    cfg: &DiffusionConfig,
    pair: &RegistrationPair,
    rng: &mut R,
) -> Result<TrainingEpisode> {
    let t = rng.random_range(1..=cfg.schedule.steps());
    make_episode_at(cfg, pair, t, rng)
}

pub fn make_episode_at<R: Rng + ?Sized>(
    cfg: &DiffusionConfig,
    pair: &RegistrationPair,
    t: usize,
    rng: &mut R,
) -> Result<TrainingEpisode> {
    if pair.source.is_empty() || pair.model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let h_t = diffuse(cfg, &pair.h0, t, rng)?;
    Ok(TrainingEpisode {
        t,
        xt_cloud: h_t.apply(&pair.source),
        model_cloud: pair.model.clone(),
        h_t,
        target: pair.h0.compose(&h_t.inverse()),
    })
}

/// Mean over points of the L1 distance between the target's and the
/// prediction's image of each diffused source point.
pub fn training_loss(episode: &TrainingEpisode, predicted: &RigidTransform) -> Result<f64> {
    let pts = episode.xt_cloud.points();
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let total: f64 = pts
        .iter()
        .map(|p| (episode.target.transform_point(p) - predicted.transform_point(p)).lp_norm(1))
        .sum();
    Ok(total / pts.len() as f64)
}
