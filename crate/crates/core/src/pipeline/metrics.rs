//! Evaluation metrics: classification accuracy, detection mAP, inter-class
//! variation and the Sim-to-Real gap report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::curve::LearningCurve;
use crate::fusion::{iou, BBox, FusedDetection};
use crate::learner::{argmax, Example, Learner};
use crate::seed::Seed;
use crate::synthdata::GroundTruthObject;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("empty ground truth")]
    EmptyGroundTruth,
    #[error("gap level {0} outside (0, 1]")]
    InvalidLevel(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Fraction of test examples whose `predict_mean` argmax (ties to the smaller
/// class index) equals the label. Example `i` uses MC seed
/// `seed.derive(i)`.
pub fn evaluate_classifier<L: Learner>(
    model: &L,
    test: &[Example],
    mc_samples: usize,
    seed: Seed,
) -> Result<f64, MetricError> {
    if test.is_empty() {
        return Err(MetricError::EmptyTestSet);
    }
    let correct = test
        .iter()
        .enumerate()
        .filter(|(i, e)| argmax(&model.predict_mean(&e.input, mc_samples, seed.derive(*i as u64))) == e.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// A detection reduced to what matching needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub class: usize,
    pub confidence: f64,
    pub bbox: BBox,
}

impl ScoredBox {
    /// Top class of the fused distribution, its probability as confidence.
    pub fn from_fused(d: &FusedDetection) -> Self {
        let (class, confidence) = d.top_class();
        Self { class, confidence, bbox: d.mean_box() }
    }
}

/// Detections of one class across images, in ranking order: confidence
/// descending, then image index, then position within the image.
fn ranked(images: &[(Vec<ScoredBox>, Vec<GroundTruthObject>)], class: usize) -> Vec<(usize, usize)> {
    let mut dets: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(im, (d, _))| d.iter().enumerate().filter(|(_, b)| b.class == class).map(move |(k, _)| (im, k)))
        .collect();
    dets.sort_by(|a, b| {
        let ca = images[a.0].0[a.1].confidence;
        let cb = images[b.0].0[b.1].confidence;
        cb.total_cmp(&ca).then(a.cmp(b))
    });
    dets
}

/// Per-class true-positive flags in ranking order, by greedy matching: each
/// detection takes the unmatched same-class ground-truth box of highest IoU
/// (ties to the smaller index) if that IoU reaches the threshold.
fn greedy_flags(images: &[(Vec<ScoredBox>, Vec<GroundTruthObject>)], class: usize, thr: f64) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    ranked(images, class)
        .into_iter()
        .map(|(im, k)| {
            let det = &images[im].0[k];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in images[im].1.iter().enumerate() {
                if g.class != class || used[im][j] {
                    continue;
                }
                let v = iou(&det.bbox, &g.bbox);
                if v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    used[im][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated AP from TP flags in ranking order.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (rank, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // precision envelope from the right
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Mean over classes present in the ground truth of the per-class AP.
/// `images` pairs each image's detections with its ground truth.
pub fn mean_average_precision(
    images: &[(Vec<ScoredBox>, Vec<GroundTruthObject>)],
    iou_threshold: f64,
) -> Result<f64, MetricError> {
    let mut classes: Vec<usize> = images.iter().flat_map(|(_, g)| g.iter().map(|o| o.class)).collect();
    if classes.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(MetricError::Invalid(format!("iou threshold {iou_threshold} outside [0, 1]")));
    }
    classes.sort_unstable();
    classes.dedup();
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let n_gt = images.iter().map(|(_, g)| g.iter().filter(|o| o.class == c).count()).sum();
            average_precision(&greedy_flags(images, c, iou_threshold), n_gt)
        })
        .sum();
    Ok(total / classes.len() as f64)
}

/// mAP of fused detections (one detection per cluster, labelled with its top
/// class).
pub fn evaluate_detection(
    images: &[(Vec<FusedDetection>, Vec<GroundTruthObject>)],
    iou_threshold: f64,
) -> Result<f64, MetricError> {
    let scored: Vec<(Vec<ScoredBox>, Vec<GroundTruthObject>)> = images
        .iter()
        .map(|(d, g)| (d.iter().map(ScoredBox::from_fused).collect(), g.clone()))
        .collect();
    mean_average_precision(&scored, iou_threshold)
}

pub fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// `sigma * |C|` with `sigma` the population standard deviation of the
/// per-class counts (zero-count classes included).
pub fn icv_from_counts(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let c = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / c;
    let var = counts.iter().map(|&k| (k as f64 - mean).powi(2)).sum::<f64>() / c;
    var.sqrt() * c
}

pub fn inter_class_variation(labels: &[usize], n_classes: usize) -> f64 {
    icv_from_counts(&class_counts(labels, n_classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub sim_perf: f64,
    pub real_perf: f64,
    pub level: f64,
    pub gap: f64,
    /// Labeled fraction of the first curve point at or above
    /// `sim_perf + level * gap`; `None` when never reached.
    pub bridged_fraction: Option<f64>,
    /// Mean metric over iterations 1..N; `None` for a curve without active
    /// iterations.
    pub mean_metric: Option<f64>,
    /// Real-trained reference below the sim-trained one.
    pub inverted: bool,
}

pub fn gap_report(curve: &LearningCurve, sim_perf: f64, real_perf: f64, level: f64) -> Result<GapReport, MetricError> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(MetricError::InvalidLevel(level));
    }
    let gap = real_perf - sim_perf;
    let threshold = sim_perf + level * gap;
    let bridged_fraction = curve.records.iter().find(|r| r.metric >= threshold).map(|r| r.labeled_fraction);
    let active: Vec<f64> = curve.records.iter().filter(|r| r.iteration > 0).map(|r| r.metric).collect();
    let mean_metric = (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64);
    Ok(GapReport { sim_perf, real_perf, level, gap, bridged_fraction, mean_metric, inverted: real_perf < sim_perf })
}
