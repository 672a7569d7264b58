//! Point clouds, registration pairs, the synthetic pair generator and file I/O.
//!
//! The generator stands in for real scanned datasets: a model cloud is sampled
//! uniformly on an analytic surface, and the source is a partial, occluded,
//! noisy subsample of it moved by the inverse of a random ground-truth pose.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{RigidTransform, Rotation};

/// Ordered list of 3D points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud { points }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

impl From<Vec<Vector3<f64>>> for PointCloud {
    fn from(points: Vec<Vector3<f64>>) -> Self {
        PointCloud::new(points)
    }
}

/// A source scan, the full model, and the pose `h0` mapping source onto model.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationPair {
    pub id: String,
    pub source: PointCloud,
    pub model: PointCloud,
    pub h0: RigidTransform,
    /// `correspondences[i]` is the model index matching source point `i`.
    pub correspondences: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Box,
    Torus,
    Composite,
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "box" => Ok(Shape::Box),
            "torus" => Ok(Shape::Torus),
            "composite" => Ok(Shape::Composite),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

/// Parameters of the synthetic pair generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub shape: Shape,
    pub n_source: usize,
    pub n_model: usize,
    /// Upper bound on the ground-truth rotation angle (radians).
    pub max_rot: f64,
    /// Radius of the ball the ground-truth translation is drawn from.
    pub max_trans: f64,
    /// Fraction of the model kept by the view half-space, in `(0, 1]`.
    pub partial_fraction: f64,
    pub noise_sigma: f64,
    pub occlusion_patches: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            shape: Shape::Torus,
            n_source: 512,
            n_model: 1024,
            max_rot: 2.0,
            max_trans: 0.3,
            partial_fraction: 0.6,
            noise_sigma: 0.005,
            occlusion_patches: 0,
            seed: 1,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_source < 3 || self.n_model < 3 {
            return Err(Error::InvalidSpec("point counts must be at least 3".into()));
        }
        if !(self.partial_fraction > 0.0 && self.partial_fraction <= 1.0) {
            return Err(Error::InvalidSpec(
                "partial_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.max_rot >= 0.0 && self.max_trans >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec(
                "ranges and noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Radius of occlusion balls relative to the bounding radius of the visible part.
const OCCLUSION_RADIUS: f64 = 0.15;
/// Ground-truth angles are re-drawn above `PI - POSE_ANGLE_MARGIN`.
const POSE_ANGLE_MARGIN: f64 = 1e-2;

/// Draws one synthetic registration pair.
pub fn generate_pair<R: Rng + ?Sized>(
    spec: &GenSpec,
    id: &str,
    rng: &mut R,
) -> Result<RegistrationPair> {
    spec.validate()?;
    let model = sample_surface(spec.shape, spec.n_model, rng);

    // View culling: keep the points furthest along a random view direction.
    let view = random_unit(rng);
    let mut order: Vec<usize> = (0..model.len()).collect();
    let depth: Vec<f64> = model.points().iter().map(|p| p.dot(&view)).collect();
    order.sort_by(|&a, &b| depth[b].total_cmp(&depth[a]).then(a.cmp(&b)));
    let keep = ((spec.partial_fraction * model.len() as f64).ceil() as usize).min(model.len());
    let mut visible: Vec<usize> = order[..keep].to_vec();
    visible.sort_unstable();

    if spec.occlusion_patches > 0 && !visible.is_empty() {
        let pts = model.points();
        let center = visible.iter().map(|&i| pts[i]).sum::<Vector3<f64>>() / visible.len() as f64;
        let extent = visible
            .iter()
            .map(|&i| (pts[i] - center).norm())
            .fold(0.0, f64::max);
        let radius = OCCLUSION_RADIUS * extent;
        for _ in 0..spec.occlusion_patches {
            if visible.is_empty() {
                break;
            }
            let c = pts[visible[rng.random_range(0..visible.len())]];
            visible.retain(|&i| (pts[i] - c).norm() > radius);
        }
    }

    if visible.len() < spec.n_source {
        return Err(Error::InsufficientPoints {
            available: visible.len(),
            required: spec.n_source,
        });
    }
    let mut picked: Vec<usize> = index::sample(rng, visible.len(), spec.n_source)
        .into_iter()
        .map(|k| visible[k])
        .collect();
    picked.sort_unstable();

    let h0 = sample_pose(spec.max_rot, spec.max_trans, rng);
    let to_source = h0.inverse();
    let source = picked
        .iter()
        .map(|&i| {
            let mut p = model.points()[i];
            if spec.noise_sigma > 0.0 {
                p += gaussian3(rng) * spec.noise_sigma;
            }
            to_source.transform_point(&p)
        })
        .collect();

    Ok(RegistrationPair {
        id: id.to_string(),
        source: PointCloud::new(source),
        model,
        h0,
        correspondences: Some(picked),
    })
}

/// Uniform axis on the sphere, uniform angle in `[0, max_rot]`, uniform
/// translation in the ball of radius `max_trans`.
pub fn sample_pose<R: Rng + ?Sized>(max_rot: f64, max_trans: f64, rng: &mut R) -> RigidTransform {
    let axis = random_unit(rng);
    let angle = loop {
        let a = rng.random::<f64>() * max_rot;
        if a < PI - POSE_ANGLE_MARGIN {
            break a;
        }
    };
    let dir = random_unit(rng);
    let r = max_trans * rng.random::<f64>().cbrt();
    RigidTransform::new(Rotation::from_axis_angle(&axis, angle), dir * r)
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = gaussian3(rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

// Shape dimensions, all in scene units.
const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;
const BOX_HALF: [f64; 3] = [1.0, 0.7, 0.4];

/// Samples `n` points uniformly (by area) on the surface of `shape`.
pub fn sample_surface<R: Rng + ?Sized>(shape: Shape, n: usize, rng: &mut R) -> PointCloud {
    let points = (0..n)
        .map(|_| match shape {
            Shape::Sphere => random_unit(rng),
            Shape::Box => sample_box(&BOX_HALF, rng),
            Shape::Torus => sample_torus(TORUS_MAJOR, TORUS_MINOR, rng),
            Shape::Composite => sample_composite(rng),
        })
        .collect();
    PointCloud::new(points)
}

fn sample_box<R: Rng + ?Sized>(half: &[f64; 3], rng: &mut R) -> Vector3<f64> {
    let [a, b, c] = *half;
    // Face pair areas, normal along x, y, z.
    let areas = [b * c, a * c, a * b];
    let total: f64 = areas.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut axis = 2;
    for (k, area) in areas.iter().enumerate() {
        if u < *area {
            axis = k;
            break;
        }
        u -= area;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vector3::zeros();
    for k in 0..3 {
        p[k] = if k == axis {
            sign * half[k]
        } else {
            rng.random_range(-half[k]..=half[k])
        };
    }
    p
}

fn sample_torus<R: Rng + ?Sized>(major: f64, minor: f64, rng: &mut R) -> Vector3<f64> {
    // Area element is proportional to (major + minor cos φ); rejection sample φ.
    loop {
        let theta = rng.random::<f64>() * 2.0 * PI;
        let phi = rng.random::<f64>() * 2.0 * PI;
        let w = (major + minor * phi.cos()) / (major + minor);
        if rng.random::<f64>() <= w {
            let ring = major + minor * phi.cos();
            return Vector3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin());
        }
    }
}

/// A slab with a sphere on one corner and a small torus standing on the
/// opposite side. Has no rotational symmetry.
fn sample_composite<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let slab = [0.8, 0.5, 0.15];
    let sphere_r = 0.35;
    let (ring_major, ring_minor) = (0.3, 0.08);
    let slab_area = 8.0 * (slab[0] * slab[1] + slab[0] * slab[2] + slab[1] * slab[2]);
    let sphere_area = 4.0 * PI * sphere_r * sphere_r;
    let ring_area = 4.0 * PI * PI * ring_major * ring_minor;
    let u = rng.random::<f64>() * (slab_area + sphere_area + ring_area);
    if u < slab_area {
        sample_box(&slab, rng)
    } else if u < slab_area + sphere_area {
        random_unit(rng) * sphere_r + Vector3::new(0.6, 0.3, 0.4)
    } else {
        let p = sample_torus(ring_major, ring_minor, rng);
        // Stand the ring up in the x-z plane.
        Vector3::new(p.x, p.z, p.y) + Vector3::new(-0.45, -0.2, 0.45)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CloudFormat {
    Xyz,
    Ply,
}

fn format_of(path: &Path) -> Result<CloudFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("xyz") => Ok(CloudFormat::Xyz),
        Some("ply") => Ok(CloudFormat::Ply),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

/// Reads an `.xyz` or ASCII `.ply` point cloud.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let text = read_text(path)?;
    match format {
        CloudFormat::Xyz => parse_xyz(path, &text),
        CloudFormat::Ply => parse_ply(path, &text),
    }
}

fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 3 values, found {}", fields.len()),
            ));
        }
        points.push(parse_point(path, i + 1, &fields)?);
    }
    if points.is_empty() {
        return Err(parse_err(path, 1, "no points"));
    }
    Ok(PointCloud::new(points))
}

fn parse_point(path: &Path, line: usize, fields: &[&str]) -> Result<Vector3<f64>> {
    let mut v = [0.0; 3];
    for (k, f) in fields.iter().take(3).enumerate() {
        v[k] = f
            .parse::<f64>()
            .map_err(|_| parse_err(path, line, format!("invalid number `{f}`")))?;
        if !v[k].is_finite() {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn parse_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }

    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut header_done = false;
    for (i, line) in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(Error::UnsupportedFormat(path.to_path_buf())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "invalid element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let Some(el) = elements.last_mut() else {
                    return Err(parse_err(path, i + 1, "property before element"));
                };
                if el.0 == "vertex" {
                    return Err(parse_err(
                        path,
                        i + 1,
                        "list properties on vertices are not supported",
                    ));
                }
                el.2.push("list".into());
            }
            ["property", _ty, name] => {
                let Some(el) = elements.last_mut() else {
                    return Err(parse_err(path, i + 1, "property before element"));
                };
                el.2.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("unexpected header line `{line}`"),
                ))
            }
        }
    }
    if !header_done {
        return Err(parse_err(path, 1, "missing end_header"));
    }

    let mut points = Vec::new();
    for (name, count, props) in &elements {
        if name != "vertex" {
            // Skip lines of elements we do not read.
            for _ in 0..*count {
                lines.next();
            }
            continue;
        }
        let col = |n: &str| props.iter().position(|p| p == n);
        let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
            return Err(parse_err(path, 1, "vertex element lacks x/y/z"));
        };
        for _ in 0..*count {
            let Some((i, line)) = lines.next() else {
                return Err(parse_err(
                    path,
                    text.lines().count(),
                    "truncated vertex data",
                ));
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != props.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {} values, found {}", props.len(), tok.len()),
                ));
            }
            points.push(parse_point(path, i + 1, &[tok[x], tok[y], tok[z]])?);
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 1, "no vertices"));
    }
    Ok(PointCloud::new(points))
}

/// Writes a cloud; the format follows the file extension.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    if format == CloudFormat::Ply {
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", cloud.len())?;
        for axis in ["x", "y", "z"] {
            writeln!(out, "property double {axis}")?;
        }
        writeln!(out, "end_header")?;
    }
    // `{}` on f64 prints the shortest representation that round-trips.
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}

/// On-disk pair manifest. Cloud paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub id: String,
    pub source_path: PathBuf,
    pub model_path: PathBuf,
    /// Row-major 4x4 ground truth.
    pub h0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences: Option<Vec<usize>>,
}

/// Writes `path` (the manifest) plus `<id>_source.xyz` and `<id>_model.xyz`
/// next to it.
pub fn save_pair(pair: &RegistrationPair, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let source_path = PathBuf::from(format!("{}_source.xyz", pair.id));
    let model_path = PathBuf::from(format!("{}_model.xyz", pair.id));
    save_cloud(&pair.source, dir.join(&source_path))?;
    save_cloud(&pair.model, dir.join(&model_path))?;
    let manifest = PairManifest {
        id: pair.id.clone(),
        source_path,
        model_path,
        h0: pair.h0.to_row_major().to_vec(),
        correspondences: pair.correspondences.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let manifest: PairManifest =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    if manifest.h0.len() != 16 {
        return Err(parse_err(
            path,
            1,
            format!("h0 must hold 16 numbers, found {}", manifest.h0.len()),
        ));
    }
    Ok(manifest)
}

pub fn load_pair(path: impl AsRef<Path>) -> Result<RegistrationPair> {
    let path = path.as_ref();
    let manifest = load_manifest(path)?;
    let h0 = RigidTransform::from_row_major(&manifest.h0)
        .ok_or_else(|| parse_err(path, 1, "h0 is not a rigid transform"))?;
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let source = load_cloud(dir.join(&manifest.source_path))?;
    let model = load_cloud(dir.join(&manifest.model_path))?;
    if let Some(corr) = &manifest.correspondences {
        if corr.len() != source.len() {
            return Err(parse_err(
                path,
                1,
                "correspondence count differs from source size",
            ));
        }
        if let Some(&bad) = corr.iter().find(|&&i| i >= model.len()) {
            return Err(Error::BadCorrespondence {
                index: bad,
                len: model.len(),
            });
        }
    }
    Ok(RegistrationPair {
        id: manifest.id,
        source,
        model,
        h0,
        correspondences: manifest.correspondences,
    })
}
