//! The two experiment tracks the loop runs on.
//!
//! A track owns the datasets (sim training set, unlabeled real pool, held-out
//! real test set) and knows how to train, evaluate and score a model. Pool
//! labels only reach training through the [`Oracle`].

use serde::Serialize;

use super::metrics::{evaluate_classifier, evaluate_detection};
use super::LoopError;
use crate::acquisition::{categorical_entropy, score_image, AcquisitionConfig};
use crate::fusion::{bayesod_inference, AnchorPrediction, FusedDetection, FusionConfig};
use crate::learner::{Example, Learner, TrainConfig};
use crate::seed::Seed;
use crate::synthdata::{jittered_boxes, ClassificationDatasets, DetectionDatasets, GroundTruthObject, Scene};

/// Labeling authority: returns the annotation of a pool item.
pub trait Oracle {
    type Label;
    fn annotate(&self, id: usize) -> Self::Label;
}

pub trait Track {
    type Label: Clone + Serialize;
    type Model: Clone;

    fn n_classes(&self) -> usize;

    /// Pool ids, ascending.
    fn pool_ids(&self) -> Vec<usize>;

    /// Train a model on the labeled pool items, plus the sim set when
    /// `include_sim`. `base` continues from existing weights; `None` starts
    /// from a fresh initialization.
    fn train(
        &self,
        base: Option<&Self::Model>,
        labeled: &[(usize, Self::Label)],
        include_sim: bool,
        cfg: &TrainConfig,
    ) -> Result<Self::Model, LoopError>;

    /// Test-set metric in [0, 1].
    fn evaluate(&self, model: &Self::Model, seed: Seed) -> Result<f64, LoopError>;

    /// Acquisition score per id (higher is more informative). The score of
    /// an id depends only on the model, the id and `seed`.
    fn uncertainty(&self, model: &Self::Model, ids: &[usize], seed: Seed) -> Result<Vec<f64>, LoopError>;

    /// Latent features per pool id.
    fn features(&self, model: &Self::Model, ids: &[usize]) -> Vec<Vec<f64>>;

    /// Latent features of the sim training set.
    fn sim_features(&self, model: &Self::Model) -> Vec<Vec<f64>>;

    /// MC class-probability samples per id, `[id][t][class]`.
    fn prob_samples(&self, model: &Self::Model, ids: &[usize], seed: Seed) -> Result<Vec<Vec<Vec<f64>>>, LoopError>;

    /// Class of every instance in a label (for batch statistics).
    fn label_classes(&self, label: &Self::Label) -> Vec<usize>;
}

pub struct ClassificationTrack<L> {
    pub data: ClassificationDatasets,
    pub prototype: L,
    pub mc_samples: usize,
}

/// Ground-truth oracle over the classification pool.
pub struct ClassificationOracle<'a>(pub &'a [Example]);

impl Oracle for ClassificationOracle<'_> {
    type Label = usize;
    fn annotate(&self, id: usize) -> usize {
        self.0[id].label
    }
}

fn fit_from<L: Learner>(prototype: &L, base: Option<&L>, examples: &[Example], cfg: &TrainConfig) -> Result<L, LoopError> {
    let mut model = base.unwrap_or(prototype).clone();
    let cfg = TrainConfig { fine_tune: base.is_some(), ..cfg.clone() };
    model.fit(examples, &cfg)?;
    Ok(model)
}

impl<L: Learner> Track for ClassificationTrack<L> {
    type Label = usize;
    type Model = L;

    fn n_classes(&self) -> usize {
        self.data.n_classes
    }

    fn pool_ids(&self) -> Vec<usize> {
        (0..self.data.pool.len()).collect()
    }

    fn train(&self, base: Option<&L>, labeled: &[(usize, usize)], include_sim: bool, cfg: &TrainConfig) -> Result<L, LoopError> {
        let mut examples: Vec<Example> = if include_sim { self.data.sim.clone() } else { Vec::new() };
        examples.extend(labeled.iter().map(|&(id, y)| Example::new(self.data.pool[id].input.clone(), y)));
        fit_from(&self.prototype, base, &examples, cfg)
    }

    fn evaluate(&self, model: &L, seed: Seed) -> Result<f64, LoopError> {
        Ok(evaluate_classifier(model, &self.data.test, self.mc_samples, seed)?)
    }

    /// Predictive entropy of the MC mean.
    fn uncertainty(&self, model: &L, ids: &[usize], seed: Seed) -> Result<Vec<f64>, LoopError> {
        ids.iter()
            .map(|&id| {
                let p = model.predict_mean(&self.data.pool[id].input, self.mc_samples, seed.derive(id as u64));
                Ok(categorical_entropy(&p)?)
            })
            .collect()
    }

    fn features(&self, model: &L, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&id| model.features(&self.data.pool[id].input)).collect()
    }

    fn sim_features(&self, model: &L) -> Vec<Vec<f64>> {
        self.data.sim.iter().map(|e| model.features(&e.input)).collect()
    }

    fn prob_samples(&self, model: &L, ids: &[usize], seed: Seed) -> Result<Vec<Vec<Vec<f64>>>, LoopError> {
        Ok(ids
            .iter()
            .map(|&id| model.predict_samples(&self.data.pool[id].input, self.mc_samples, seed.derive(id as u64)))
            .collect())
    }

    fn label_classes(&self, label: &usize) -> Vec<usize> {
        vec![*label]
    }
}

/// Detection track. The detector is emulated around a learned classifier:
/// for each object, each of `anchors_per_object` anchors takes `T` MC class
/// distributions from the classifier on the object's appearance vector, and
/// `T` box samples jittered around the object's box with standard deviation
/// `sigma_box * (1 + box_uncertainty_gain * u)`, where `u` is the anchor's
/// normalized predictive entropy. Localization is therefore simulated while
/// both semantic and spatial uncertainty follow the learned model.
pub struct DetectionTrack<L> {
    pub data: DetectionDatasets,
    pub prototype: L,
    pub mc_samples: usize,
    pub anchors_per_object: usize,
    pub sigma_box: f64,
    pub box_uncertainty_gain: f64,
    pub fusion: FusionConfig,
    pub acquisition: AcquisitionConfig,
    /// IoU threshold of the mAP evaluation.
    pub iou_threshold: f64,
}

pub struct DetectionOracle<'a>(pub &'a [Scene]);

impl Oracle for DetectionOracle<'_> {
    type Label = Vec<GroundTruthObject>;
    fn annotate(&self, id: usize) -> Vec<GroundTruthObject> {
        self.0[id].objects.clone()
    }
}

impl<L: Learner> DetectionTrack<L> {
    /// Anchor outputs for a scene; anchor `m` of object `k` uses
    /// `seed.derive_path(&[k, m])`.
    pub fn detect(&self, model: &L, scene: &Scene, seed: Seed) -> Result<Vec<AnchorPrediction>, LoopError> {
        let ln_c = (self.data.n_classes as f64).ln();
        let mut out = Vec::with_capacity(scene.objects.len() * self.anchors_per_object);
        for (k, (obj, x)) in scene.objects.iter().zip(&scene.appearance).enumerate() {
            for m in 0..self.anchors_per_object {
                let s = seed.derive_path(&[k as u64, m as u64]);
                let scores = model.predict_samples(x, self.mc_samples, s);
                let mut mean = vec![0.0; self.data.n_classes];
                for row in &scores {
                    mean.iter_mut().zip(row).for_each(|(a, b)| *a += b / scores.len() as f64);
                }
                let u = if ln_c > 0.0 { categorical_entropy(&normalized(&mean))? / ln_c } else { 0.0 };
                let sigma = self.sigma_box * (1.0 + self.box_uncertainty_gain * u);
                let boxes = jittered_boxes(&obj.bbox, sigma, self.mc_samples, &mut s.derive(u64::MAX).rng());
                out.push(AnchorPrediction::new(clamp_scores(scores), boxes)?);
            }
        }
        Ok(out)
    }

    pub fn fused(&self, model: &L, scene: &Scene, seed: Seed) -> Result<Vec<FusedDetection>, LoopError> {
        Ok(bayesod_inference(&self.detect(model, scene, seed)?, &self.fusion)?)
    }

    fn examples_of(&self, scene: &Scene, objects: &[GroundTruthObject]) -> Result<Vec<Example>, LoopError> {
        if objects.len() != scene.appearance.len() {
            return Err(LoopError::Inconsistent(format!(
                "scene {} has {} objects but the label lists {}",
                scene.id,
                scene.appearance.len(),
                objects.len()
            )));
        }
        Ok(scene.appearance.iter().zip(objects).map(|(x, o)| Example::new(x.clone(), o.class)).collect())
    }
}

// Softmax outputs can exceed 1 by an ulp after summation elsewhere; scores
// must lie in [0, 1].
fn clamp_scores(mut s: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    s.iter_mut().for_each(|row| row.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0)));
    s
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let z: f64 = p.iter().sum();
    p.iter().map(|v| (v / z).clamp(0.0, 1.0)).collect()
}

impl<L: Learner> Track for DetectionTrack<L> {
    type Label = Vec<GroundTruthObject>;
    type Model = L;

    fn n_classes(&self) -> usize {
        self.data.n_classes
    }

    fn pool_ids(&self) -> Vec<usize> {
        (0..self.data.pool.len()).collect()
    }

    fn train(
        &self,
        base: Option<&L>,
        labeled: &[(usize, Vec<GroundTruthObject>)],
        include_sim: bool,
        cfg: &TrainConfig,
    ) -> Result<L, LoopError> {
        let mut examples = Vec::new();
        if include_sim {
            for s in &self.data.sim {
                examples.extend(self.examples_of(s, &s.objects)?);
            }
        }
        for (id, objects) in labeled {
            examples.extend(self.examples_of(&self.data.pool[*id], objects)?);
        }
        fit_from(&self.prototype, base, &examples, cfg)
    }

    /// mAP over the test scenes; scene `i` uses seed `seed.derive(i)`.
    fn evaluate(&self, model: &L, seed: Seed) -> Result<f64, LoopError> {
        let images = self
            .data
            .test
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((self.fused(model, s, seed.derive(i as u64))?, s.objects.clone())))
            .collect::<Result<Vec<_>, LoopError>>()?;
        Ok(evaluate_detection(&images, self.iou_threshold)?)
    }

    /// Image acquisition score of the fused detections.
    fn uncertainty(&self, model: &L, ids: &[usize], seed: Seed) -> Result<Vec<f64>, LoopError> {
        ids.iter()
            .map(|&id| {
                let dets = self.fused(model, &self.data.pool[id], seed.derive(id as u64))?;
                Ok(score_image(id as u64, &dets, &self.acquisition)?.score)
            })
            .collect()
    }

    /// Mean logit vector over the scene's objects (zeros for an empty scene).
    fn features(&self, model: &L, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&id| mean_logits(model, &self.data.pool[id], self.data.n_classes)).collect()
    }

    fn sim_features(&self, model: &L) -> Vec<Vec<f64>> {
        self.data.sim.iter().map(|s| mean_logits(model, s, self.data.n_classes)).collect()
    }

    fn prob_samples(&self, _: &L, _: &[usize], _: Seed) -> Result<Vec<Vec<Vec<f64>>>, LoopError> {
        Err(LoopError::Unsupported("batchbald needs one label per item; the detection track has several".into()))
    }

    fn label_classes(&self, label: &Vec<GroundTruthObject>) -> Vec<usize> {
        label.iter().map(|o| o.class).collect()
    }
}

fn mean_logits<L: Learner>(model: &L, scene: &Scene, n_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_classes];
    if scene.appearance.is_empty() {
        return out;
    }
    for x in &scene.appearance {
        out.iter_mut().zip(model.features(x)).for_each(|(a, b)| *a += b);
    }
    let n = scene.appearance.len() as f64;
    out.iter_mut().for_each(|a| *a /= n);
    out
}
