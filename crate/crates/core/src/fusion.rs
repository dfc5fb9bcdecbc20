//! Anchor-level clustering and Bayesian fusion of MC detector outputs.
//!
//! Instead of suppressing overlapping anchors (NMS), anchors are grouped by
//! spatial affinity and every group is fused into one detection. The member
//! with the highest mean class score is the cluster center; the other members
//! act as measurements of it:
//!
//! * classification: per-class product of member mean scores (independent
//!   Bernoulli per class, optionally renormalized to a categorical),
//! * regression: product of Gaussians, i.e. precisions add and the fused mean
//!   is the precision-weighted mean of the member means.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Diagonal loading applied to every sample covariance before inversion.
pub const DEFAULT_COV_EPSILON: f64 = 1e-6;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid box ({0}, {1}, {2}, {3}): need finite x_min < x_max and y_min < y_max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("no samples")]
    NoSamples,
    #[error("anchor prediction: {0}")]
    InvalidAnchor(String),
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("iou threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, FusionError> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min >= x_max || y_min >= y_max {
            return Err(FusionError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, FusionError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn from_vector(v: &Vector4<f64>) -> Result<Self, FusionError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union. Symmetric by construction: every step uses
/// commutative `min`/`max` and the union sums the two areas in a fixed order
/// of the smaller-first pair.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let (sa, sb) = (a.area(), b.area());
    let (lo, hi) = if sa <= sb { (sa, sb) } else { (sb, sa) };
    let union = lo + hi - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Sample mean and unbiased covariance of 4-vectors. A single sample yields
/// the zero covariance.
pub fn mc_statistics(samples: &[Vector4<f64>]) -> Result<(Vector4<f64>, Matrix4<f64>), FusionError> {
    if samples.is_empty() {
        return Err(FusionError::NoSamples);
    }
    let n = samples.len() as f64;
    // Shifted by the first sample so identical samples give their value back
    // exactly.
    let first = samples[0];
    let mean = first + samples.iter().fold(Vector4::zeros(), |acc, s| acc + (s - first)) / n;
    if samples.len() == 1 {
        return Ok((mean, Matrix4::zeros()));
    }
    let mut cov = Matrix4::zeros();
    for s in samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    // exact symmetry
    let cov = (cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Raw MC output of one anchor: `T` class-score vectors and `T` boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrediction {
    score_samples: Vec<Vec<f64>>,
    box_samples: Vec<BBox>,
}

impl AnchorPrediction {
    pub fn new(score_samples: Vec<Vec<f64>>, box_samples: Vec<BBox>) -> Result<Self, FusionError> {
        let t = score_samples.len();
        if t == 0 {
            return Err(FusionError::InvalidAnchor("need at least one MC sample".into()));
        }
        if box_samples.len() != t {
            return Err(FusionError::InvalidAnchor(format!(
                "{} score samples but {} box samples",
                t,
                box_samples.len()
            )));
        }
        let c = score_samples[0].len();
        if c == 0 {
            return Err(FusionError::InvalidAnchor("empty score vector".into()));
        }
        for row in &score_samples {
            if row.len() != c {
                return Err(FusionError::InvalidAnchor("score vectors differ in length".into()));
            }
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(FusionError::InvalidAnchor(format!("score {bad} outside [0, 1]")));
            }
        }
        Ok(Self { score_samples, box_samples })
    }

    pub fn score_samples(&self) -> &[Vec<f64>] {
        &self.score_samples
    }

    pub fn box_samples(&self) -> &[BBox] {
        &self.box_samples
    }

    pub fn n_samples(&self) -> usize {
        self.score_samples.len()
    }

    pub fn n_classes(&self) -> usize {
        self.score_samples[0].len()
    }

    pub fn mean_scores(&self) -> Vec<f64> {
        let t = self.n_samples() as f64;
        let mut out = vec![0.0; self.n_classes()];
        for row in &self.score_samples {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out.iter_mut().for_each(|o| *o = (*o / t).clamp(0.0, 1.0));
        out
    }

    pub fn max_mean_score(&self) -> f64 {
        self.mean_scores().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn box_statistics(&self) -> (Vector4<f64>, Matrix4<f64>) {
        let v: Vec<Vector4<f64>> = self.box_samples.iter().map(BBox::to_vector).collect();
        mc_statistics(&v).expect("anchor has at least one sample")
    }

    /// Mean box, used for cluster affinity.
    pub fn mean_box(&self) -> BBox {
        let (m, _) = self.box_statistics();
        // The mean of valid boxes is valid: each coordinate inequality is
        // preserved under averaging.
        BBox { x_min: m[0], y_min: m[1], x_max: m[2], y_max: m[3] }
    }
}

/// A group of anchors fused into one detection. `members[center_index]` is
/// the anchor with the highest max mean class score.
#[derive(Debug, Clone)]
pub struct DetectionCluster<'a> {
    pub center_index: usize,
    pub members: Vec<&'a AnchorPrediction>,
    /// Positions of the members in the input slice, aligned with `members`.
    pub anchor_ids: Vec<usize>,
}

impl<'a> DetectionCluster<'a> {
    pub fn center(&self) -> &'a AnchorPrediction {
        self.members[self.center_index]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Greedy score-descending clustering on mean boxes.
///
/// Anchors are ranked by max mean class score (ties: lower index first). The
/// highest unassigned anchor opens a cluster and absorbs every unassigned
/// anchor whose mean-box IoU with it is at least `iou_threshold`.
pub fn cluster_anchors(
    preds: &[AnchorPrediction],
    iou_threshold: f64,
) -> Result<Vec<DetectionCluster<'_>>, FusionError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(FusionError::InvalidThreshold(iou_threshold));
    }
    let scores: Vec<f64> = preds.iter().map(AnchorPrediction::max_mean_score).collect();
    let boxes: Vec<BBox> = preds.iter().map(AnchorPrediction::mean_box).collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut assigned = vec![false; preds.len()];
    let mut clusters = Vec::new();
    for &center in &order {
        if assigned[center] {
            continue;
        }
        assigned[center] = true;
        let mut ids = vec![center];
        for &other in &order {
            if !assigned[other] && iou(&boxes[center], &boxes[other]) >= iou_threshold {
                assigned[other] = true;
                ids.push(other);
            }
        }
        clusters.push(DetectionCluster {
            center_index: 0,
            members: ids.iter().map(|&i| &preds[i]).collect(),
            anchor_ids: ids,
        });
    }
    Ok(clusters)
}

/// How the fused per-class product is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalFusion {
    /// Independent per-class Bernoulli products, no renormalization.
    #[default]
    Bernoulli,
    /// Products renormalized to sum to one.
    Renormalized,
}

/// Per-class product of member mean scores, accumulated in log space.
pub fn fuse_categorical(cluster: &DetectionCluster<'_>, mode: CategoricalFusion) -> Vec<f64> {
    let center = cluster.center();
    let c = center.n_classes();
    if cluster.len() == 1 {
        return center.mean_scores();
    }
    let mut log_acc = vec![0.0f64; c];
    for member in &cluster.members {
        for (acc, p) in log_acc.iter_mut().zip(member.mean_scores()) {
            *acc += p.ln();
        }
    }
    let mut out: Vec<f64> = log_acc.iter().map(|l| l.exp().clamp(0.0, 1.0)).collect();
    if mode == CategoricalFusion::Renormalized {
        let z: f64 = out.iter().sum();
        if z > 0.0 {
            out.iter_mut().for_each(|p| *p /= z);
        } else {
            // every class vetoed by some member: no information left
            out.iter_mut().for_each(|p| *p = 1.0 / c as f64);
        }
    }
    out
}

/// Product-of-Gaussians fusion of the members' regularized box statistics.
pub fn fuse_gaussian(
    cluster: &DetectionCluster<'_>,
    epsilon: f64,
) -> Result<(Vector4<f64>, Matrix4<f64>), FusionError> {
    let regularized = |a: &AnchorPrediction| {
        let (m, c) = a.box_statistics();
        (m, c + Matrix4::identity() * epsilon)
    };
    if cluster.len() == 1 {
        let (m, c) = regularized(cluster.center());
        if c.cholesky().is_none() {
            return Err(FusionError::DegenerateCovariance);
        }
        return Ok((m, c));
    }
    // Information form relative to the center mean: the fused mean is
    // m_c + C * sum_i P_i (m_i - m_c), equal to C * sum_i P_i m_i.
    let (m_c, _) = regularized(cluster.center());
    let mut precision = Matrix4::zeros();
    let mut info = Vector4::zeros();
    for member in &cluster.members {
        let (m, c) = regularized(member);
        let p = c.cholesky().ok_or(FusionError::DegenerateCovariance)?.inverse();
        info += p * (m - m_c);
        precision += p;
    }
    let precision = (precision + precision.transpose()) * 0.5;
    let cov = precision.cholesky().ok_or(FusionError::DegenerateCovariance)?.inverse();
    let cov = (cov + cov.transpose()) * 0.5;
    Ok((m_c + cov * info, cov))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub iou_threshold: f64,
    /// Fuse class scores across the cluster; when off the center's mean
    /// scores are used as is.
    pub cls_bayesian: bool,
    pub categorical: CategoricalFusion,
    pub cov_epsilon: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            cls_bayesian: false,
            categorical: CategoricalFusion::Bernoulli,
            cov_epsilon: DEFAULT_COV_EPSILON,
        }
    }
}

/// One fused detection: class distribution plus Gaussian box.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub class_probs: Vec<f64>,
    pub box_mean: Vector4<f64>,
    pub box_cov: Matrix4<f64>,
    pub cluster_size: usize,
}

impl FusedDetection {
    /// Predicted class (ties to the lower index) and its probability.
    pub fn top_class(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &p) in self.class_probs.iter().enumerate() {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    /// The mean box, repaired to a valid box if fusion moved corners past
    /// each other.
    pub fn mean_box(&self) -> BBox {
        let m = &self.box_mean;
        let (x0, x1) = (m[0].min(m[2]), m[0].max(m[2]));
        let (y0, y1) = (m[1].min(m[3]), m[1].max(m[3]));
        BBox { x_min: x0, y_min: y0, x_max: x1.max(x0 + 1e-9), y_max: y1.max(y0 + 1e-9) }
    }
}

/// Cluster anchors and fuse each cluster into a detection.
pub fn bayesod_inference(
    preds: &[AnchorPrediction],
    cfg: &FusionConfig,
) -> Result<Vec<FusedDetection>, FusionError> {
    let clusters = cluster_anchors(preds, cfg.iou_threshold)?;
    clusters
        .iter()
        .map(|cluster| {
            let (box_mean, box_cov) = fuse_gaussian(cluster, cfg.cov_epsilon)?;
            let class_probs = if cfg.cls_bayesian {
                fuse_categorical(cluster, cfg.categorical)
            } else {
                cluster.center().mean_scores()
            };
            Ok(FusedDetection { class_probs, box_mean, box_cov, cluster_size: cluster.len() })
        })
        .collect()
}
