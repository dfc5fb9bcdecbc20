//! Instance and image informativeness scores.
//!
//! Each fused detection yields a semantic uncertainty (sum of per-class
//! Bernoulli entropies) and a spatial one (differential entropy of the
//! Gaussian box). `comb` merges the two per detection, `agg` reduces the
//! detections of an image to a single acquisition value. All entropies are in
//! nats.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedDetection;

/// Dimensionality of the box random variable.
const BOX_DIM: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("degenerate covariance")]
    DegenerateCovariance,
}

fn xlogx(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Entropy of a Bernoulli variable with success probability `p`.
pub fn bernoulli_entropy(p: f64) -> f64 {
    -(xlogx(p) + xlogx(1.0 - p))
}

/// Sum of independent per-class Bernoulli entropies.
pub fn cls_entropy(probs: &[f64]) -> Result<f64, AcquisitionError> {
    probs.iter().try_fold(0.0, |acc, &p| {
        if !(0.0..=1.0).contains(&p) {
            return Err(AcquisitionError::OutOfRange(p));
        }
        Ok(acc + bernoulli_entropy(p))
    })
}

/// Shannon entropy of a categorical distribution. Terms are summed in sorted
/// order, so the result is bitwise invariant under permutation of `probs`.
pub fn categorical_entropy(probs: &[f64]) -> Result<f64, AcquisitionError> {
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(AcquisitionError::OutOfRange(p));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AcquisitionError::NotNormalized(total));
    }
    let mut terms: Vec<f64> = probs.iter().map(|&p| xlogx(p)).collect();
    terms.sort_by(f64::total_cmp);
    Ok(-terms.iter().sum::<f64>())
}

/// Differential entropy of a 4-D Gaussian with covariance `cov`:
/// `k/2 + k/2 ln(2 pi) + 1/2 ln|cov|`.
pub fn reg_entropy(cov: &Matrix4<f64>) -> Result<f64, AcquisitionError> {
    if (cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1.0) {
        return Err(AcquisitionError::DegenerateCovariance);
    }
    let chol = cov.cholesky().ok_or(AcquisitionError::DegenerateCovariance)?;
    let l = chol.l_dirty();
    let log_det: f64 = (0..4).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    if !log_det.is_finite() {
        return Err(AcquisitionError::DegenerateCovariance);
    }
    Ok(BOX_DIM / 2.0 + BOX_DIM / 2.0 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyPair {
    pub u_cls: f64,
    pub u_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comb {
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agg {
    Max,
    Sum,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub comb: Comb,
    pub agg: Agg,
    pub w_cls: f64,
    pub w_reg: f64,
    /// Score of an image on which nothing was detected.
    pub empty_image_score: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { comb: Comb::Sum, agg: Agg::Avg, w_cls: 1.0, w_reg: 0.01, empty_image_score: 0.0 }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_cls.is_finite() && self.w_cls >= 0.0) {
            return Err(format!("acquisition.w_cls must be finite and >= 0, got {}", self.w_cls));
        }
        if !(self.w_reg.is_finite() && self.w_reg >= 0.0) {
            return Err(format!("acquisition.w_reg must be finite and >= 0, got {}", self.w_reg));
        }
        if !self.empty_image_score.is_finite() {
            return Err("acquisition.empty_image_score must be finite".into());
        }
        Ok(())
    }
}

pub fn combine(u: UncertaintyPair, cfg: &AcquisitionConfig) -> f64 {
    let cls = cfg.w_cls * u.u_cls;
    let reg = cfg.w_reg * u.u_reg;
    match cfg.comb {
        Comb::Sum => cls + reg,
        Comb::Max => cls.max(reg),
    }
}

pub fn aggregate(values: &[f64], agg: Agg, empty: f64) -> f64 {
    if values.is_empty() {
        return empty;
    }
    match agg {
        Agg::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Agg::Sum => values.iter().sum(),
        Agg::Avg => values.iter().sum::<f64>() / values.len() as f64,
    }
}

pub fn detection_uncertainty(det: &FusedDetection) -> Result<UncertaintyPair, AcquisitionError> {
    Ok(UncertaintyPair { u_cls: cls_entropy(&det.class_probs)?, u_reg: reg_entropy(&det.box_cov)? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub image_id: u64,
    pub score: f64,
    pub n_detections: usize,
}

pub fn score_image(
    image_id: u64,
    detections: &[FusedDetection],
    cfg: &AcquisitionConfig,
) -> Result<ImageScore, AcquisitionError> {
    let per_det = detections
        .iter()
        .map(|d| detection_uncertainty(d).map(|u| combine(u, cfg)))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(ImageScore {
        image_id,
        score: aggregate(&per_det, cfg.agg, cfg.empty_image_score),
        n_detections: detections.len(),
    })
}
