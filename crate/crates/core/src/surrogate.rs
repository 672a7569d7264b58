//! Registration models used as the denoiser's surrogate.
//!
//! A surrogate estimates the relative transform that maps the current source
//! cloud onto the model cloud. Three are provided: closed-form Kabsch on known
//! correspondences, trimmed point-to-point ICP, and a noisy oracle that
//! perturbs the true relative transform.

use nalgebra::{Matrix3, Vector3, SVD};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{PointCloud, RegistrationPair};
use crate::error::{Error, Result};
use crate::forward::standard_normal_twist;
use crate::kdtree::NearestNeighbors;
use crate::lie::{exp, log, RigidTransform, Rotation, Twist};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateKind {
    KabschKnownCorrespondence,
    TrimmedIcp {
        max_iters: usize,
        /// Fraction of the worst matches discarded each iteration, in `[0, 1)`.
        trim_fraction: f64,
        /// Convergence threshold on the norm of the per-iteration update twist.
        tol: f64,
    },
    NoisyOracle {
        rot_sigma_rad: f64,
        trans_sigma: f64,
        /// Multiply the sigmas by the current misalignment angle and offset.
        error_scales_with_misalignment: bool,
    },
}

impl SurrogateKind {
    pub fn icp_default() -> Self {
        SurrogateKind::TrimmedIcp {
            max_iters: 50,
            trim_fraction: 0.1,
            tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SurrogateKind::KabschKnownCorrespondence => Ok(()),
            SurrogateKind::TrimmedIcp {
                max_iters,
                trim_fraction,
                tol,
            } => {
                if max_iters < 1 {
                    return Err(Error::Config("ICP needs at least one iteration".into()));
                }
                if !(0.0..1.0).contains(&trim_fraction) {
                    return Err(Error::Config("trim fraction must lie in [0, 1)".into()));
                }
                if tol.is_nan() || tol < 0.0 {
                    return Err(Error::Config("ICP tolerance must be non-negative".into()));
                }
                Ok(())
            }
            SurrogateKind::NoisyOracle {
                rot_sigma_rad,
                trans_sigma,
                ..
            } => {
                if !(rot_sigma_rad >= 0.0 && trans_sigma >= 0.0) {
                    return Err(Error::Config("oracle sigmas must be non-negative".into()));
                }
                Ok(())
            }
        }
    }
}

/// Inputs to one registration call.
#[derive(Clone, Copy, Debug)]
pub struct RegistrationQuery<'a> {
    pub source: &'a PointCloud,
    pub model: &'a PointCloud,
    /// `correspondences[i]` indexes the model point matching `source[i]`.
    pub correspondences: Option<&'a [usize]>,
    /// True transform from `source` onto `model`, when known.
    pub truth: Option<&'a RigidTransform>,
}

impl<'a> RegistrationQuery<'a> {
    pub fn new(source: &'a PointCloud, model: &'a PointCloud) -> Self {
        RegistrationQuery {
            source,
            model,
            correspondences: None,
            truth: None,
        }
    }

    pub fn from_pair(pair: &'a RegistrationPair) -> Self {
        RegistrationQuery {
            source: &pair.source,
            model: &pair.model,
            correspondences: pair.correspondences.as_deref(),
            truth: Some(&pair.h0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Estimated transform taking the source into the model frame.
    pub h: RigidTransform,
    /// Mean point distance after alignment.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Anything that can stand in for the registration network.
pub trait Surrogate {
    fn register(
        &self,
        query: &RegistrationQuery<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RegistrationResult>;
}

impl Surrogate for SurrogateKind {
    fn register(
        &self,
        query: &RegistrationQuery<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RegistrationResult> {
        register(self, query, rng)
    }
}

pub fn register(
    kind: &SurrogateKind,
    query: &RegistrationQuery<'_>,
    rng: &mut dyn RngCore,
) -> Result<RegistrationResult> {
    if query.source.is_empty() || query.model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    match *kind {
        SurrogateKind::KabschKnownCorrespondence => {
            let corr = query.correspondences.ok_or(Error::MissingCorrespondences)?;
            let dst = corresponding_points(query.source, query.model, corr)?;
            let h = kabsch(query.source.points(), &dst)?;
            Ok(RegistrationResult {
                residual: mean_distance(&h, query.source.points(), &dst),
                h,
                iterations: 1,
                converged: true,
            })
        }
        SurrogateKind::TrimmedIcp {
            max_iters,
            trim_fraction,
            tol,
        } => {
            trimmed_icp(query.source, query.model, max_iters, trim_fraction, tol).map(|r| r.result)
        }
        SurrogateKind::NoisyOracle {
            rot_sigma_rad,
            trans_sigma,
            error_scales_with_misalignment,
        } => {
            let truth = query.truth.ok_or(Error::MissingTruth)?;
            let (mut sr, mut st) = (rot_sigma_rad, trans_sigma);
            if error_scales_with_misalignment {
                sr *= truth.rotation.angle();
                st *= truth.translation.norm();
            }
            let eps = standard_normal_twist(rng);
            let h = exp(&Twist::new(eps.rho * sr, eps.nu * st)).compose(truth);
            Ok(RegistrationResult {
                residual: nearest_residual(&h, query.source, query.model),
                h,
                iterations: 1,
                converged: true,
            })
        }
    }
}

/// Registers the pair's source against its model directly, with no diffusion.
pub fn single_shot_baseline(
    kind: &SurrogateKind,
    pair: &RegistrationPair,
    rng: &mut dyn RngCore,
) -> Result<RegistrationResult> {
    register(kind, &RegistrationQuery::from_pair(pair), rng)
}

fn corresponding_points(
    source: &PointCloud,
    model: &PointCloud,
    corr: &[usize],
) -> Result<Vec<Vector3<f64>>> {
    if corr.len() != source.len() {
        return Err(Error::Config(format!(
            "{} correspondences for {} source points",
            corr.len(),
            source.len()
        )));
    }
    corr.iter()
        .map(|&j| {
            model
                .points()
                .get(j)
                .copied()
                .ok_or(Error::BadCorrespondence {
                    index: j,
                    len: model.len(),
                })
        })
        .collect()
}

/// Least-squares rigid alignment of paired points (`dst ≈ R src + t`).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    assert_eq!(src.len(), dst.len(), "kabsch needs paired points");
    let n = src.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{n} point pairs, need at least 3"
        )));
    }
    let cs = src.iter().sum::<Vector3<f64>>() / n as f64;
    let cd = dst.iter().sum::<Vector3<f64>>() / n as f64;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        scatter += a * a.transpose();
        cross += a * (d - cd).transpose();
    }
    // Rotation is recoverable unless the source collapses to a line or a point.
    let mut spread = scatter.symmetric_eigenvalues();
    spread.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if spread[1] <= 1e-12 * spread[0].max(f64::MIN_POSITIVE) || spread[0] <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = SVD::new(cross, true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = Rotation::from_matrix_unchecked(v * d * u.transpose()).renormalized();
    let t = cd - r.rotate(&cs);
    Ok(RigidTransform::new(r, t))
}

fn mean_distance(h: &RigidTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let total: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (h.transform_point(s) - d).norm())
        .sum();
    total / src.len().max(1) as f64
}

fn nearest_residual(h: &RigidTransform, source: &PointCloud, model: &PointCloud) -> f64 {
    let nn = NearestNeighbors::new(model.points());
    let total: f64 = source
        .points()
        .iter()
        .map(|p| {
            nn.nearest(&h.transform_point(p))
                .map_or(0.0, |(_, d2)| d2.sqrt())
        })
        .sum();
    total / source.len().max(1) as f64
}

/// ICP output plus per-iteration diagnostics.
#[derive(Clone, Debug)]
pub struct IcpTrace {
    pub result: RegistrationResult,
    /// Mean distance of the kept matches at each matching step.
    pub mean_distance: Vec<f64>,
    /// Mean squared distance of the kept matches at each matching step.
    pub mean_squared_distance: Vec<f64>,
}

/// Trimmed point-to-point ICP from the identity.
pub fn trimmed_icp(
    source: &PointCloud,
    model: &PointCloud,
    max_iters: usize,
    trim_fraction: f64,
    tol: f64,
) -> Result<IcpTrace> {
    if source.is_empty() || model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = source.len();
    let keep = (((1.0 - trim_fraction) * n as f64).ceil() as usize).clamp(3.min(n), n);
    let nn = NearestNeighbors::new(model.points());
    let mut h = RigidTransform::identity();
    let mut trace = IcpTrace {
        result: RegistrationResult {
            h,
            residual: 0.0,
            iterations: 0,
            converged: false,
        },
        mean_distance: Vec::new(),
        mean_squared_distance: Vec::new(),
    };

    let mut matches: Vec<(usize, usize, f64)> = Vec::with_capacity(n);
    let mut moved: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let match_step = |h: &RigidTransform,
                      moved: &mut Vec<Vector3<f64>>,
                      matches: &mut Vec<(usize, usize, f64)>| {
        moved.clear();
        moved.extend(source.points().iter().map(|p| h.transform_point(p)));
        matches.clear();
        for (i, p) in moved.iter().enumerate() {
            let (j, d2) = nn.nearest(p).expect("model is nonempty");
            matches.push((i, j, d2));
        }
        matches.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        matches.truncate(keep);
        let mse = matches.iter().map(|m| m.2).sum::<f64>() / keep as f64;
        let md = matches.iter().map(|m| m.2.sqrt()).sum::<f64>() / keep as f64;
        (md, mse)
    };

    for it in 1..=max_iters {
        let (md, mse) = match_step(&h, &mut moved, &mut matches);
        trace.mean_distance.push(md);
        trace.mean_squared_distance.push(mse);
        let src: Vec<Vector3<f64>> = matches.iter().map(|m| moved[m.0]).collect();
        let dst: Vec<Vector3<f64>> = matches.iter().map(|m| model.points()[m.1]).collect();
        let delta = kabsch(&src, &dst)?;
        h = delta.compose(&h);
        trace.result.iterations = it;
        let step = log(&delta)
            .map(|xi| xi.to_vector().norm())
            .unwrap_or(f64::INFINITY);
        if step < tol {
            trace.result.converged = true;
            break;
        }
    }
    let (md, _) = match_step(&h, &mut moved, &mut matches);
    trace.result.h = h;
    trace.result.residual = md;
    Ok(trace)
}
