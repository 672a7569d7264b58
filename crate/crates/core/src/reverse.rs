//! Reverse (denoising) process on SE(3).
//!
//! Starting from the identity, each step registers the currently transformed
//! source against the model, lifts the estimate to an absolute pose
//! `Ĥ_{t→0} H_t`, and blends it with `H_t` in the tangent space using the
//! posterior weights `λ0`, `λ1`:
//!
//! ```text
//! H_{t-1} = Exp(λ0 Log(Ĥ_{t→0} H_t) + λ1 Log(H_t) [+ √β̃_t ε])
//! ```

use rand::{Rng, RngCore};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::forward::standard_normal_twist;
use crate::lie::{RigidTransform, TangentMap, Twist};
use crate::metrics::PoseError;
use crate::schedule::Schedule;
use crate::surrogate::{RegistrationQuery, RegistrationResult, Surrogate, SurrogateKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Deterministic,
    Random,
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "deterministic" => Ok(InferenceMode::Deterministic),
            "random" => Ok(InferenceMode::Random),
            other => Err(format!(
                "unknown mode `{other}` (expected deterministic or random)"
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReverseConfig {
    /// Usually a respaced schedule with a handful of steps.
    pub schedule: Schedule,
    pub mode: InferenceMode,
    pub surrogate: SurrogateKind,
    pub record_trajectory: bool,
    pub seed: u64,
    pub tangent: TangentMap,
    /// Multiplier on the `√β̃_t ε` term in random mode.
    pub noise_scale: f64,
}

impl ReverseConfig {
    pub fn new(schedule: Schedule, surrogate: SurrogateKind) -> Self {
        ReverseConfig {
            schedule,
            mode: InferenceMode::Deterministic,
            surrogate,
            record_trajectory: true,
            seed: 0,
            tangent: TangentMap::Coupled,
            noise_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    /// Respaced step `k` (counts down to 1).
    pub k: usize,
    /// Step of the full-length schedule that `k` corresponds to.
    pub t: usize,
    pub h_t: RigidTransform,
    pub h_hat: RigidTransform,
    /// `H_{t-1}`, the output of this step.
    pub h_next: RigidTransform,
    pub residual: f64,
    /// Error of `h_next` against the ground truth, when supplied.
    pub error: Option<PoseError>,
}

/// Steps ordered by decreasing `k`; the last one produces the final estimate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

fn blend(
    map: TangentMap,
    lambda0: f64,
    lambda1: f64,
    anchor: &RigidTransform,
    current: &RigidTransform,
    noise: Option<&Twist>,
) -> Result<RigidTransform> {
    let mut xi = map.log(anchor)?.scale(lambda0) + map.log(current)?.scale(lambda1);
    if let Some(n) = noise {
        xi = xi + *n;
    }
    Ok(map.exp(&xi))
}

/// Sample of `q(H_{t-1} | H_t, H0)`.
pub fn posterior_sample<R: Rng + ?Sized>(
    sched: &Schedule,
    t: usize,
    h0: &RigidTransform,
    ht: &RigidTransform,
    rng: &mut R,
    noisy: bool,
) -> Result<RigidTransform> {
    let c = sched.coefficients_at(t)?;
    let noise = noisy.then(|| standard_normal_twist(rng).scale(c.beta_tilde.sqrt()));
    blend(
        TangentMap::Coupled,
        c.lambda0,
        c.lambda1,
        h0,
        ht,
        noise.as_ref(),
    )
}

/// Mean of the learned prior with the relative estimate `h_hat` substituted
/// for `H0 H_t⁻¹`.
pub fn prior_mean(
    sched: &Schedule,
    t: usize,
    h_hat: &RigidTransform,
    ht: &RigidTransform,
) -> Result<RigidTransform> {
    prior_mean_with(TangentMap::Coupled, sched, t, h_hat, ht)
}

pub fn prior_mean_with(
    map: TangentMap,
    sched: &Schedule,
    t: usize,
    h_hat: &RigidTransform,
    ht: &RigidTransform,
) -> Result<RigidTransform> {
    let c = sched.coefficients_at(t)?;
    blend(map, c.lambda0, c.lambda1, &h_hat.compose(ht), ht, None)
}

/// Per-pair data the reverse loop needs besides the current pose.
#[derive(Clone, Copy, Debug)]
pub struct InferenceInput<'a> {
    pub source: &'a PointCloud,
    pub model: &'a PointCloud,
    pub correspondences: Option<&'a [usize]>,
    /// Ground-truth `H0`; feeds the noisy oracle and the trajectory errors.
    pub truth: Option<&'a RigidTransform>,
}

impl<'a> InferenceInput<'a> {
    pub fn new(source: &'a PointCloud, model: &'a PointCloud) -> Self {
        InferenceInput {
            source,
            model,
            correspondences: None,
            truth: None,
        }
    }

    pub fn from_pair(pair: &'a crate::data::RegistrationPair) -> Self {
        InferenceInput {
            source: &pair.source,
            model: &pair.model,
            correspondences: pair.correspondences.as_deref(),
            truth: Some(&pair.h0),
        }
    }
}

/// One reverse step at respaced index `k` using `cfg.surrogate`.
pub fn reverse_step<R: Rng>(
    cfg: &ReverseConfig,
    k: usize,
    ht: &RigidTransform,
    input: &InferenceInput<'_>,
    rng: &mut R,
) -> Result<(RigidTransform, RegistrationResult)> {
    reverse_step_with(cfg, &cfg.surrogate, k, ht, input, rng)
}

pub fn reverse_step_with<R: Rng>(
    cfg: &ReverseConfig,
    surrogate: &dyn Surrogate,
    k: usize,
    ht: &RigidTransform,
    input: &InferenceInput<'_>,
    rng: &mut R,
) -> Result<(RigidTransform, RegistrationResult)> {
    let c = cfg.schedule.coefficients_at(k)?;
    let xt = ht.apply(input.source);
    let relative_truth = input.truth.map(|h0| h0.compose(&ht.inverse()));
    let query = RegistrationQuery {
        source: &xt,
        model: input.model,
        correspondences: input.correspondences,
        truth: relative_truth.as_ref(),
    };
    let result = surrogate.register(&query, rng as &mut dyn RngCore)?;
    // ε is drawn in both modes so the surrogate sees the same stream.
    let eps = standard_normal_twist(rng);
    let noise = (cfg.mode == InferenceMode::Random && k >= 2)
        .then(|| eps.scale(c.beta_tilde.sqrt() * cfg.noise_scale));
    let h_next = blend(
        cfg.tangent,
        c.lambda0,
        c.lambda1,
        &result.h.compose(ht),
        ht,
        noise.as_ref(),
    )?;
    Ok((h_next, result))
}

/// Runs the reverse chain `k = K..1` from the identity.
pub fn run_inference<R: Rng>(
    cfg: &ReverseConfig,
    input: &InferenceInput<'_>,
    rng: &mut R,
) -> Result<(RigidTransform, Trajectory)> {
    run_inference_with(cfg, &cfg.surrogate, input, rng)
}

pub fn run_inference_with<R: Rng>(
    cfg: &ReverseConfig,
    surrogate: &dyn Surrogate,
    input: &InferenceInput<'_>,
    rng: &mut R,
) -> Result<(RigidTransform, Trajectory)> {
    if input.source.is_empty() || input.model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut h = RigidTransform::identity();
    let mut trajectory = Trajectory::default();
    for k in (1..=cfg.schedule.steps()).rev() {
        let (h_next, result) = match reverse_step_with(cfg, surrogate, k, &h, input, rng) {
            Ok(out) => out,
            Err(e) => {
                return Err(Error::StepFailure {
                    step: k,
                    source: Box::new(e),
                    trajectory: Box::new(trajectory),
                })
            }
        };
        if cfg.record_trajectory {
            trajectory.steps.push(TrajectoryStep {
                k,
                t: cfg.schedule.timesteps()[k - 1],
                h_t: h,
                h_hat: result.h,
                h_next,
                residual: result.residual,
                error: input.truth.map(|truth| PoseError::between(&h_next, truth)),
            });
        }
        h = h_next;
    }
    Ok((h, trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pair, GenSpec};
    use crate::lie::{exp, log, Rotation};
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::seeding::rng_from_seed;
    use nalgebra::Vector3;

    fn sched() -> Schedule {
        make_schedule(ScheduleKind::Cosine, 200).unwrap()
    }

    fn perfect() -> SurrogateKind {
        SurrogateKind::NoisyOracle {
            rot_sigma_rad: 0.0,
            trans_sigma: 0.0,
            error_scales_with_misalignment: false,
        }
    }

    fn rz(theta: f64) -> RigidTransform {
        RigidTransform::from_rotation(Rotation::about_z(theta))
    }

    #[test]
    fn posterior_at_first_step_returns_h0() {
        let s = sched();
        let h0 = exp(&Twist::new(
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(0.5, 0.0, 0.1),
        ));
        let ht = rz(0.4);
        let out = posterior_sample(&s, 1, &h0, &ht, &mut rng_from_seed(0), false).unwrap();
        assert!(out.max_abs_diff(&h0) < 1e-14);
    }

    #[test]
    fn posterior_on_commuting_rotations() {
        let s = sched();
        let (a, b) = (0.8, -0.3);
        for t in [2, 60, 199] {
            let c = s.coefficients_at(t).unwrap();
            let out =
                posterior_sample(&s, t, &rz(a), &rz(b), &mut rng_from_seed(0), false).unwrap();
            let expect = rz(c.lambda0 * a + c.lambda1 * b);
            assert!(out.max_abs_diff(&expect) < 1e-14);
        }
    }

    #[test]
    fn prior_mean_examples() {
        let s = sched();
        let h0 = exp(&Twist::new(
            Vector3::new(-0.6, 0.2, 0.9),
            Vector3::new(0.1, 0.2, 0.3),
        ));
        let ht = exp(&Twist::new(
            Vector3::new(0.2, 0.4, -0.1),
            Vector3::new(-0.2, 0.0, 0.3),
        ));
        let t = 120;
        let rel = h0.compose(&ht.inverse());
        let pm = prior_mean(&s, t, &rel, &ht).unwrap();
        let post = posterior_sample(&s, t, &h0, &ht, &mut rng_from_seed(0), false).unwrap();
        assert!(pm.max_abs_diff(&post) < 1e-12);

        let c = s.coefficients_at(t).unwrap();
        let pm = prior_mean(&s, t, &RigidTransform::identity(), &rz(0.7)).unwrap();
        assert!(pm.max_abs_diff(&rz((c.lambda0 + c.lambda1) * 0.7)) < 1e-14);

        let h_hat = exp(&Twist::new(
            Vector3::new(0.1, 0.0, 0.2),
            Vector3::new(0.0, 0.3, 0.0),
        ));
        let via_post = posterior_sample(
            &s,
            t,
            &h_hat.compose(&ht),
            &ht,
            &mut rng_from_seed(0),
            false,
        )
        .unwrap();
        assert_eq!(prior_mean(&s, t, &h_hat, &ht).unwrap(), via_post);
    }

    #[test]
    fn noisy_posterior_spreads_by_beta_tilde() {
        let s = sched();
        let t = 150;
        let c = s.coefficients_at(t).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 4000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let h = posterior_sample(&s, t, &rz(0.0), &rz(0.0), &mut rng, true).unwrap();
            let x = log(&h).unwrap().nu.x;
            sum += x;
            sum2 += x * x;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        // Standard error of a Gaussian variance estimate is var·√(2/n).
        assert!((var - c.beta_tilde).abs() < 4.0 * c.beta_tilde * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn perfect_surrogate_step_on_commuting_case() {
        let s = sched().respace(5).unwrap();
        let cfg = ReverseConfig::new(s.clone(), perfect());
        let pts = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        let (theta0, theta_t) = (1.1, 0.4);
        let truth = rz(theta0);
        let input = InferenceInput {
            truth: Some(&truth),
            ..InferenceInput::new(&pts, &pts)
        };
        for k in 1..=5 {
            let c = s.coefficients_at(k).unwrap();
            let (h, _) =
                reverse_step(&cfg, k, &rz(theta_t), &input, &mut rng_from_seed(1)).unwrap();
            assert!(h.max_abs_diff(&rz(c.lambda0 * theta0 + c.lambda1 * theta_t)) < 1e-12);
            if k == 1 {
                assert!(h.max_abs_diff(&truth) < 1e-14);
            }
        }
    }

    #[test]
    fn kabsch_step_matches_perfect_oracle() {
        let spec = GenSpec {
            noise_sigma: 0.0,
            ..GenSpec::default()
        };
        let pair = generate_pair(&spec, "k", &mut rng_from_seed(2)).unwrap();
        let input = InferenceInput::from_pair(&pair);
        let s = sched().respace(5).unwrap();
        let oracle_cfg = ReverseConfig::new(s.clone(), perfect());
        let kabsch_cfg = ReverseConfig::new(s, SurrogateKind::KabschKnownCorrespondence);
        let ht = exp(&Twist::new(
            Vector3::new(0.2, -0.1, 0.3),
            Vector3::new(0.05, 0.0, 0.0),
        ));
        for k in 1..=5 {
            let (a, _) = reverse_step(&oracle_cfg, k, &ht, &input, &mut rng_from_seed(0)).unwrap();
            let (b, _) = reverse_step(&kabsch_cfg, k, &ht, &input, &mut rng_from_seed(0)).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
    }

    /// Scalar recursion `c_{k-1} = λ0 + λ1 c_k`, `c_K = 0`, giving the fraction
    /// of the ground-truth twist reached after each step.
    fn scalar_rollout(s: &Schedule) -> Vec<f64> {
        let mut c = 0.0;
        (1..=s.steps())
            .rev()
            .map(|k| {
                c = s.lambda0()[k - 1] + s.lambda1()[k - 1] * c;
                c
            })
            .collect()
    }

    #[test]
    fn perfect_surrogate_rollout_matches_scalar_recursion() {
        let s = sched().respace(5).unwrap();
        let cfg = ReverseConfig::new(s.clone(), perfect());
        let theta0 = 2.3;
        let truth = rz(theta0);
        let pts = PointCloud::new(vec![Vector3::new(1.0, 2.0, 0.0)]);
        let input = InferenceInput {
            truth: Some(&truth),
            ..InferenceInput::new(&pts, &pts)
        };
        let (est, traj) = run_inference(&cfg, &input, &mut rng_from_seed(4)).unwrap();
        let fractions = scalar_rollout(&s);
        assert_eq!(traj.steps.len(), 5);
        for (step, c) in traj.steps.iter().zip(&fractions) {
            assert!(step.h_next.max_abs_diff(&rz(c * theta0)) < 1e-12);
        }
        assert_eq!(*fractions.last().unwrap(), 1.0);
        assert!(est.max_abs_diff(&truth) < 1e-6);
        assert_eq!(traj.steps.first().unwrap().k, 5);
        assert_eq!(traj.steps.last().unwrap().t, 40);
    }

    struct IdentitySurrogate;

    impl Surrogate for IdentitySurrogate {
        fn register(
            &self,
            _: &RegistrationQuery<'_>,
            _: &mut dyn RngCore,
        ) -> Result<RegistrationResult> {
            Ok(RegistrationResult {
                h: RigidTransform::identity(),
                residual: 0.0,
                iterations: 1,
                converged: true,
            })
        }
    }

    #[test]
    fn identity_surrogate_keeps_identity() {
        let cfg = ReverseConfig::new(sched().respace(5).unwrap(), perfect());
        let pts = PointCloud::new(vec![Vector3::new(1.0, 2.0, 0.0)]);
        let truth = RigidTransform::identity();
        let input = InferenceInput {
            truth: Some(&truth),
            ..InferenceInput::new(&pts, &pts)
        };
        let (est, _) =
            run_inference_with(&cfg, &IdentitySurrogate, &input, &mut rng_from_seed(0)).unwrap();
        assert_eq!(est, RigidTransform::identity());
    }

    #[test]
    fn random_mode_is_reproducible_and_reduces_to_deterministic() {
        let pair = generate_pair(&GenSpec::default(), "r", &mut rng_from_seed(6)).unwrap();
        let input = InferenceInput::from_pair(&pair);
        let oracle = SurrogateKind::NoisyOracle {
            rot_sigma_rad: 0.1,
            trans_sigma: 0.1,
            error_scales_with_misalignment: true,
        };
        let mut cfg = ReverseConfig::new(sched().respace(5).unwrap(), oracle);
        cfg.mode = InferenceMode::Random;
        let a = run_inference(&cfg, &input, &mut rng_from_seed(9)).unwrap();
        let b = run_inference(&cfg, &input, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);

        cfg.noise_scale = 0.0;
        let zeroed = run_inference(&cfg, &input, &mut rng_from_seed(9)).unwrap();
        cfg.mode = InferenceMode::Deterministic;
        cfg.noise_scale = 1.0;
        let det = run_inference(&cfg, &input, &mut rng_from_seed(9)).unwrap();
        assert_eq!(zeroed, det);
        assert_ne!(a.0, det.0);
    }

    #[test]
    fn cut_locus_failure_carries_partial_trajectory() {
        struct Flip;
        impl Surrogate for Flip {
            fn register(
                &self,
                q: &RegistrationQuery<'_>,
                _: &mut dyn RngCore,
            ) -> Result<RegistrationResult> {
                // Fine on the first call (identity input); afterwards the lifted
                // estimate Ĥ H_t is a half turn.
                let p = q.source.points()[0];
                let h = if p == Vector3::new(1.0, 0.0, 0.0) {
                    rz(0.5)
                } else {
                    rz(std::f64::consts::PI - p.y.atan2(p.x))
                };
                Ok(RegistrationResult {
                    h,
                    residual: 0.0,
                    iterations: 1,
                    converged: true,
                })
            }
        }
        let cfg = ReverseConfig::new(sched().respace(5).unwrap(), perfect());
        let pts = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        let input = InferenceInput::new(&pts, &pts);
        match run_inference_with(&cfg, &Flip, &input, &mut rng_from_seed(0)) {
            Err(Error::StepFailure {
                step,
                source,
                trajectory,
            }) => {
                assert_eq!(step, 4);
                assert!(matches!(*source, Error::NearCutLocus { .. }));
                assert_eq!(trajectory.steps.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
