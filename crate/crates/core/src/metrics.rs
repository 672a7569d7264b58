//! Pose-error metrics and threshold success rates.

use std::fmt;
use std::io::Write;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lie::{RigidTransform, Rotation};

/// Rotation error in radians and translation error in scene units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub re: f64,
    pub te: f64,
}

impl PoseError {
    pub fn between(estimate: &RigidTransform, truth: &RigidTransform) -> Self {
        PoseError {
            re: rotation_error(&estimate.rotation, &truth.rotation),
            te: translation_error(&estimate.translation, &truth.translation),
        }
    }

    pub fn re_deg(&self) -> f64 {
        self.re.to_degrees()
    }
}

/// `arccos((tr(R̂ᵀR*) − 1) / 2)` with the argument clamped to `[-1, 1]`.
pub fn rotation_error(r_hat: &Rotation, r_star: &Rotation) -> f64 {
    let tr = (r_hat.matrix().transpose() * r_star.matrix()).trace();
    ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Euclidean (non-squared) distance between translations.
pub fn translation_error(t_hat: &Vector3<f64>, t_star: &Vector3<f64>) -> f64 {
    (t_hat - t_star).norm()
}

/// Rotation and translation thresholds for [`map_summary`].
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub rot_deg: Vec<f64>,
    pub trans: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            rot_deg: vec![5.0, 10.0],
            trans: vec![0.01, 0.02],
        }
    }
}

/// Success fraction per threshold, rotation and translation counted independently.
#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub thresholds_rot: Vec<f64>,
    pub thresholds_trans: Vec<f64>,
    pub map_rot: Vec<f64>,
    pub map_trans: Vec<f64>,
    pub n_pairs: usize,
}

/// Fraction of errors strictly below each threshold.
pub fn map_summary(errors: &[PoseError], thresholds: &Thresholds) -> Result<MapReport> {
    if errors.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = errors.len() as f64;
    let frac =
        |pred: &dyn Fn(&PoseError) -> bool| errors.iter().filter(|e| pred(e)).count() as f64 / n;
    let map_rot = thresholds
        .rot_deg
        .iter()
        .map(|&deg| frac(&|e| e.re < deg.to_radians()))
        .collect();
    let map_trans = thresholds
        .trans
        .iter()
        .map(|&th| frac(&|e| e.te < th))
        .collect();
    Ok(MapReport {
        thresholds_rot: thresholds.rot_deg.clone(),
        thresholds_trans: thresholds.trans.clone(),
        map_rot,
        map_trans,
        n_pairs: errors.len(),
    })
}

impl MapReport {
    /// Success fraction at the rotation threshold `deg`, if it was evaluated.
    pub fn rot_at(&self, deg: f64) -> Option<f64> {
        self.thresholds_rot
            .iter()
            .position(|&t| t == deg)
            .map(|i| self.map_rot[i])
    }

    pub fn trans_at(&self, th: f64) -> Option<f64> {
        self.thresholds_trans
            .iter()
            .position(|&t| t == th)
            .map(|i| self.map_trans[i])
    }

    /// CSV rows `threshold,axis,fraction` (after a header).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "threshold,axis,fraction")?;
        for (t, f) in self.thresholds_rot.iter().zip(&self.map_rot) {
            writeln!(out, "{},rotation_deg,{}", fmt_sig(*t, 9), fmt_sig(*f, 9))?;
        }
        for (t, f) in self.thresholds_trans.iter().zip(&self.map_trans) {
            writeln!(out, "{},translation,{}", fmt_sig(*t, 9), fmt_sig(*f, 9))?;
        }
        Ok(())
    }
}

impl fmt::Display for MapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs: {}", self.n_pairs)?;
        for (t, v) in self.thresholds_rot.iter().zip(&self.map_rot) {
            writeln!(f, "  RE < {t:>6}deg  {v:>6.3}")?;
        }
        for (t, v) in self.thresholds_trans.iter().zip(&self.map_trans) {
            writeln!(f, "  TE < {t:>8}  {v:>6.3}")?;
        }
        Ok(())
    }
}

/// Formats `x` with `digits` significant digits, in the style of C's `%g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
