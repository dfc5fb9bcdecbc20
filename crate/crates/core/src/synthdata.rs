//! Synthetic paired simulation/real datasets.
//!
//! Classification data are Gaussian mixtures. The real domain differs from
//! the simulated one by a translation of every class mean (covariate shift)
//! and by skewed class priors in the unlabeled pool (label shift); the two
//! knobs are independent.
//!
//! Detection scenes are sets of ground-truth boxes; [`synth_detector_outputs`]
//! emulates MC-dropout anchor outputs around them.
//!
//! Seeds: every generator draws from `seed.derive(k)` streams with fixed,
//! documented stream indices, so datasets are reproducible per
//! `(spec, seed)` and independent parts never share a stream.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{AnchorPrediction, BBox};
use crate::learner::Example;
use crate::seed::Seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("box size range [{min}, {max}] infeasible for a {width}x{height} extent")]
    InfeasibleBoxSize { min: f64, max: f64, width: f64, height: f64 },
    #[error("labels sidecar line {line}: {msg}")]
    Sidecar { line: usize, msg: String },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SynthError> {
    Err(SynthError::InvalidSpec(msg.into()))
}

fn check_priors(p: &[f64]) -> Result<(), SynthError> {
    if p.is_empty() {
        return invalid("empty class priors");
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("class priors must be finite and non-negative");
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return invalid(format!("class priors sum to {s}, expected 1"));
    }
    Ok(())
}

/// Dirichlet draw with shape `alpha * K * base_k` per class (so a uniform
/// base gives the symmetric Dirichlet(alpha)), via normalized Gamma draws.
pub fn dirichlet(base: &[f64], alpha: f64, seed: Seed) -> Result<Vec<f64>, SynthError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return invalid("dirichlet alpha must be > 0");
    }
    let mut rng = seed.rng();
    let draws: Vec<f64> = base
        .iter()
        .map(|&b| {
            if b <= 0.0 {
                return 0.0;
            }
            Gamma::new(alpha * b * base.len() as f64, 1.0).expect("positive shape").sample(&mut rng)
        })
        .collect();
    let s: f64 = draws.iter().sum();
    if s <= 0.0 {
        // All mass underflowed; fall back to the base itself.
        return Ok(base.to_vec());
    }
    let mut p: Vec<f64> = draws.iter().map(|d| d / s).collect();
    // push the rounding residue onto the largest entry
    let resid = 1.0 - p.iter().sum::<f64>();
    let big = crate::learner::argmax(&p);
    p[big] += resid;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PriorSkew {
    None,
    Explicit { priors: Vec<f64> },
    Dirichlet { alpha: f64, seed: u64 },
}

/// Difference of a shifted domain from its base spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Added to every class mean. Empty means no translation.
    pub translation: Vec<f64>,
    pub prior_skew: PriorSkew,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self { translation: Vec::new(), prior_skew: PriorSkew::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationDomainSpec {
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic per-class covariance `cov_scale * I`.
    pub cov_scale: f64,
    pub class_priors: Vec<f64>,
    pub n_points: usize,
    pub shift: DomainShift,
}

impl ClassificationDomainSpec {
    pub fn n_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.class_means.is_empty() || self.dim() == 0 {
            return invalid("need at least one class mean of positive dimension");
        }
        if self.class_means.iter().any(|m| m.len() != self.dim() || m.iter().any(|v| !v.is_finite())) {
            return invalid("class means must be finite and share one dimension");
        }
        if !(self.cov_scale.is_finite() && self.cov_scale > 0.0) {
            return invalid("cov_scale must be > 0");
        }
        if self.class_priors.len() != self.n_classes() {
            return invalid("one prior per class mean required");
        }
        check_priors(&self.class_priors)?;
        if !self.shift.translation.is_empty() && self.shift.translation.len() != self.dim() {
            return invalid("translation dimension differs from the class means");
        }
        if let PriorSkew::Explicit { priors } = &self.shift.prior_skew {
            if priors.len() != self.n_classes() {
                return invalid("skewed priors need one entry per class");
            }
            check_priors(priors)?;
        }
        Ok(())
    }

    pub fn effective_priors(&self) -> Result<Vec<f64>, SynthError> {
        match &self.shift.prior_skew {
            PriorSkew::None => Ok(self.class_priors.clone()),
            PriorSkew::Explicit { priors } => Ok(priors.clone()),
            PriorSkew::Dirichlet { alpha, seed } => dirichlet(&self.class_priors, *alpha, Seed(*seed)),
        }
    }

    pub fn effective_means(&self) -> Vec<Vec<f64>> {
        self.class_means
            .iter()
            .map(|m| {
                if self.shift.translation.is_empty() {
                    m.clone()
                } else {
                    m.iter().zip(&self.shift.translation).map(|(a, b)| a + b).collect()
                }
            })
            .collect()
    }
}

fn gaussian_point<R: Rng>(mean: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sd * z
        })
        .collect()
}

/// `n` examples: class from the (possibly skewed) priors, point from that
/// class's Gaussian.
pub fn generate_classification(
    spec: &ClassificationDomainSpec,
    n: usize,
    seed: Seed,
) -> Result<Vec<Example>, SynthError> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be >= 1");
    }
    let priors = spec.effective_priors()?;
    let means = spec.effective_means();
    let classes = WeightedIndex::new(&priors).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let sd = spec.cov_scale.sqrt();
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|_| {
            let c = classes.sample(&mut rng);
            Example::new(gaussian_point(&means[c], sd, &mut rng), c)
        })
        .collect())
}

/// `n_classes` means drawn uniformly on the sphere of radius `radius`.
pub fn means_on_sphere(n_classes: usize, dim: usize, radius: f64, seed: Seed) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    (0..n_classes).map(|_| random_direction(dim, &mut rng).into_iter().map(|v| v * radius).collect()).collect()
}

fn random_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random translation of length `magnitude`.
pub fn random_translation(dim: usize, magnitude: f64, seed: Seed) -> Vec<f64> {
    let mut rng = seed.rng();
    random_direction(dim, &mut rng).into_iter().map(|v| v * magnitude).collect()
}

/// How the real pool's class priors are skewed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelShiftSpec {
    /// Explicit pool priors; takes precedence over `dirichlet_alpha`.
    pub pool_priors: Option<Vec<f64>>,
    /// Concentration of a Dirichlet draw around the uniform prior; smaller is
    /// more skewed.
    pub dirichlet_alpha: Option<f64>,
}

impl Default for LabelShiftSpec {
    fn default() -> Self {
        Self { pool_priors: None, dirichlet_alpha: Some(1.0) }
    }
}

impl LabelShiftSpec {
    fn skew(&self, seed: Seed) -> PriorSkew {
        match (&self.pool_priors, self.dirichlet_alpha) {
            (Some(p), _) => PriorSkew::Explicit { priors: p.clone() },
            (None, Some(alpha)) => PriorSkew::Dirichlet { alpha, seed: seed.0 },
            (None, None) => PriorSkew::None,
        }
    }
}

/// Full sim/pool/test classification benchmark. The sim set and the real test
/// set are balanced; only the pool carries the label shift. The translation
/// is `shift_magnitude` standard deviations long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationBenchmarkSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// Radius of the sphere carrying the class means.
    pub separation: f64,
    pub cov_scale: f64,
    pub n_sim: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub shift_magnitude: f64,
    pub label_shift: LabelShiftSpec,
}

impl Default for ClassificationBenchmarkSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            dim: 8,
            separation: 5.0,
            cov_scale: 1.0,
            n_sim: 500,
            n_pool: 2000,
            n_test: 1000,
            shift_magnitude: 3.0,
            label_shift: LabelShiftSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDatasets {
    pub n_classes: usize,
    pub sim: Vec<Example>,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
    pub pool_priors: Vec<f64>,
}

// Stream indices under the dataset seed.
const S_MEANS: u64 = 1;
const S_TRANSLATION: u64 = 2;
const S_PRIORS: u64 = 3;
const S_SIM: u64 = 4;
const S_POOL: u64 = 5;
const S_TEST: u64 = 6;
const S_SCENES: u64 = 7;
const S_APPEARANCE: u64 = 8;

impl ClassificationBenchmarkSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_classes == 0 || self.dim == 0 {
            return invalid("n_classes and dim must be >= 1");
        }
        if self.n_sim == 0 || self.n_pool == 0 || self.n_test == 0 {
            return invalid("n_sim, n_pool and n_test must be >= 1");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return invalid("separation must be finite and >= 0");
        }
        if !(self.shift_magnitude.is_finite() && self.shift_magnitude >= 0.0) {
            return invalid("shift_magnitude must be finite and >= 0");
        }
        if let Some(a) = self.label_shift.dirichlet_alpha {
            if !(a.is_finite() && a > 0.0) {
                return invalid("dirichlet_alpha must be > 0");
            }
        }
        Ok(())
    }

    pub fn domains(&self, seed: Seed) -> Result<(ClassificationDomainSpec, ClassificationDomainSpec, ClassificationDomainSpec), SynthError> {
        self.validate()?;
        let uniform = vec![1.0 / self.n_classes as f64; self.n_classes];
        let sim = ClassificationDomainSpec {
            class_means: means_on_sphere(self.n_classes, self.dim, self.separation, seed.derive(S_MEANS)),
            cov_scale: self.cov_scale,
            class_priors: uniform,
            n_points: self.n_sim,
            shift: DomainShift::default(),
        };
        let translation =
            random_translation(self.dim, self.shift_magnitude * self.cov_scale.sqrt(), seed.derive(S_TRANSLATION));
        let pool = ClassificationDomainSpec {
            n_points: self.n_pool,
            shift: DomainShift { translation: translation.clone(), prior_skew: self.label_shift.skew(seed.derive(S_PRIORS)) },
            ..sim.clone()
        };
        let test = ClassificationDomainSpec {
            n_points: self.n_test,
            shift: DomainShift { translation, prior_skew: PriorSkew::None },
            ..sim.clone()
        };
        Ok((sim, pool, test))
    }

    pub fn build(&self, seed: Seed) -> Result<ClassificationDatasets, SynthError> {
        let (sim, pool, test) = self.domains(seed)?;
        Ok(ClassificationDatasets {
            n_classes: self.n_classes,
            sim: generate_classification(&sim, sim.n_points, seed.derive(S_SIM))?,
            pool: generate_classification(&pool, pool.n_points, seed.derive(S_POOL))?,
            test: generate_classification(&test, test.n_points, seed.derive(S_TEST))?,
            pool_priors: pool.effective_priors()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSceneSpec {
    pub width: f64,
    pub height: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub class_priors: Vec<f64>,
    /// Side lengths are drawn uniformly from `[box_min, box_max]`.
    pub box_min: f64,
    pub box_max: f64,
    /// Per-coordinate Gaussian jitter of box samples, in pixels.
    pub sigma_box: f64,
    /// Gaussian noise on score logits.
    pub score_noise: f64,
    /// Logit of the true class; off-class logits are its negation.
    pub true_logit: f64,
    pub anchors_per_object: usize,
    pub mc_samples: usize,
}

impl Default for DetectionSceneSpec {
    fn default() -> Self {
        Self {
            width: 256.0,
            height: 256.0,
            objects_min: 1,
            objects_max: 4,
            class_priors: vec![1.0 / 3.0; 3],
            box_min: 24.0,
            box_max: 64.0,
            sigma_box: 1.0,
            score_noise: 0.5,
            true_logit: 3.0,
            anchors_per_object: 3,
            mc_samples: 10,
        }
    }
}

impl DetectionSceneSpec {
    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return invalid("extent must be positive");
        }
        if self.objects_min > self.objects_max {
            return invalid("objects_min exceeds objects_max");
        }
        check_priors(&self.class_priors)?;
        if !(self.box_min > 0.0 && self.box_min <= self.box_max && self.box_max <= self.width.min(self.height)) {
            return Err(SynthError::InfeasibleBoxSize {
                min: self.box_min,
                max: self.box_max,
                width: self.width,
                height: self.height,
            });
        }
        if !(self.sigma_box >= 0.0 && self.sigma_box.is_finite()) || !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return invalid("noise levels must be finite and >= 0");
        }
        if self.anchors_per_object == 0 || self.mc_samples == 0 {
            return invalid("anchors_per_object and mc_samples must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub objects: Vec<GroundTruthObject>,
    /// Appearance feature vector per object, aligned with `objects`; empty
    /// when no appearance model was attached.
    pub appearance: Vec<Vec<f64>>,
}

pub fn generate_detection_scenes(spec: &DetectionSceneSpec, n: usize, seed: Seed) -> Result<Vec<Scene>, SynthError> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be >= 1");
    }
    let classes = WeightedIndex::new(&spec.class_priors).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|id| {
            let count = rng.random_range(spec.objects_min..=spec.objects_max);
            let objects = (0..count)
                .map(|_| {
                    let class = classes.sample(&mut rng);
                    let w = rng.random_range(spec.box_min..=spec.box_max);
                    let h = rng.random_range(spec.box_min..=spec.box_max);
                    let x0 = rng.random_range(0.0..=spec.width - w);
                    let y0 = rng.random_range(0.0..=spec.height - h);
                    // x0 + w can round past the edge
                    let x1 = (x0 + w).min(spec.width);
                    let y1 = (y0 + h).min(spec.height);
                    GroundTruthObject { class, bbox: BBox::new(x0, y0, x1, y1).expect("positive side lengths") }
                })
                .collect();
            Scene { id, objects, appearance: Vec::new() }
        })
        .collect())
}

/// Draw an appearance vector for every object from its class Gaussian in
/// `domain` (priors are ignored; the object's class is given).
pub fn attach_appearance(scenes: &mut [Scene], domain: &ClassificationDomainSpec, seed: Seed) -> Result<(), SynthError> {
    domain.validate()?;
    let means = domain.effective_means();
    let sd = domain.cov_scale.sqrt();
    for scene in scenes.iter_mut() {
        let mut rng = seed.derive(scene.id as u64).rng();
        scene.appearance = scene
            .objects
            .iter()
            .map(|o| {
                if o.class >= means.len() {
                    return Err(SynthError::InvalidSpec(format!("object class {} has no appearance mean", o.class)));
                }
                Ok(gaussian_point(&means[o.class], sd, &mut rng))
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(())
}

/// `t` samples of `gt` with independent N(0, sigma^2) noise per coordinate.
/// Samples whose corners cross are put back in order.
pub fn jittered_boxes<R: Rng>(gt: &BBox, sigma: f64, t: usize, rng: &mut R) -> Vec<BBox> {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    (0..t)
        .map(|_| {
            let v: Vec<f64> = gt.to_array().iter().map(|c| c + noise.sample(rng)).collect();
            let (x0, x1) = ordered(v[0], v[2]);
            let (y0, y1) = ordered(v[1], v[3]);
            BBox::new(x0, y0, x1, y1).expect("ordered finite corners")
        })
        .collect()
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo < hi {
        (lo, hi)
    } else {
        (lo, lo + 1e-6 * lo.abs().max(1.0))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Emulated MC-dropout detector output for one scene: `M` anchors per
/// ground-truth object (objects in order, anchors within an object
/// consecutive). Anchor `m` of object `k` uses `seed.derive_path(&[k, m])`.
pub fn synth_detector_outputs(scene: &Scene, spec: &DetectionSceneSpec, seed: Seed) -> Vec<AnchorPrediction> {
    let c = spec.n_classes();
    let noise = Normal::new(0.0, spec.score_noise).expect("finite score noise");
    let mut out = Vec::with_capacity(scene.objects.len() * spec.anchors_per_object);
    for (k, obj) in scene.objects.iter().enumerate() {
        for m in 0..spec.anchors_per_object {
            let mut rng = seed.derive_path(&[k as u64, m as u64]).rng();
            let scores = (0..spec.mc_samples)
                .map(|_| {
                    (0..c)
                        .map(|j| {
                            let mu = if j == obj.class { spec.true_logit } else { -spec.true_logit };
                            sigmoid(mu + noise.sample(&mut rng))
                        })
                        .collect()
                })
                .collect();
            let boxes = jittered_boxes(&obj.bbox, spec.sigma_box, spec.mc_samples, &mut rng);
            out.push(AnchorPrediction::new(scores, boxes).expect("valid synthetic anchor"));
        }
    }
    out
}

/// Full sim/pool/test detection benchmark. Objects carry appearance vectors
/// drawn like the classification benchmark (class means on a sphere, real
/// domain translated); the pool's object classes follow the skewed priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionBenchmarkSpec {
    pub scene: DetectionSceneSpec,
    pub appearance_dim: usize,
    pub separation: f64,
    pub cov_scale: f64,
    pub shift_magnitude: f64,
    pub label_shift: LabelShiftSpec,
    pub n_sim: usize,
    pub n_pool: usize,
    pub n_test: usize,
    /// Box jitter grows as `sigma_box * (1 + gain * u)` with the model's
    /// normalized predictive entropy `u` on the object.
    pub box_uncertainty_gain: f64,
}

impl Default for DetectionBenchmarkSpec {
    fn default() -> Self {
        Self {
            scene: DetectionSceneSpec::default(),
            appearance_dim: 8,
            separation: 4.0,
            cov_scale: 1.0,
            shift_magnitude: 5.0,
            label_shift: LabelShiftSpec::default(),
            n_sim: 200,
            n_pool: 400,
            n_test: 200,
            box_uncertainty_gain: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDatasets {
    pub n_classes: usize,
    pub sim: Vec<Scene>,
    pub pool: Vec<Scene>,
    pub test: Vec<Scene>,
    pub pool_priors: Vec<f64>,
}

impl DetectionBenchmarkSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.scene.validate()?;
        if self.appearance_dim == 0 {
            return invalid("appearance_dim must be >= 1");
        }
        if self.n_sim == 0 || self.n_pool == 0 || self.n_test == 0 {
            return invalid("n_sim, n_pool and n_test must be >= 1");
        }
        if !(self.box_uncertainty_gain.is_finite() && self.box_uncertainty_gain >= 0.0) {
            return invalid("box_uncertainty_gain must be finite and >= 0");
        }
        Ok(())
    }

    pub fn build(&self, seed: Seed) -> Result<DetectionDatasets, SynthError> {
        self.validate()?;
        let n_classes = self.scene.n_classes();
        let classes = ClassificationBenchmarkSpec {
            n_classes,
            dim: self.appearance_dim,
            separation: self.separation,
            cov_scale: self.cov_scale,
            n_sim: self.n_sim,
            n_pool: self.n_pool,
            n_test: self.n_test,
            shift_magnitude: self.shift_magnitude,
            label_shift: self.label_shift.clone(),
        };
        let (sim_dom, pool_dom, test_dom) = classes.domains(seed)?;
        let pool_priors = pool_dom.effective_priors()?;
        let scenes = seed.derive(S_SCENES);
        let appearance = seed.derive(S_APPEARANCE);
        let uniform = DetectionSceneSpec { class_priors: vec![1.0 / n_classes as f64; n_classes], ..self.scene.clone() };
        let skewed = DetectionSceneSpec { class_priors: pool_priors.clone(), ..self.scene.clone() };
        let mut sim = generate_detection_scenes(&uniform, self.n_sim, scenes.derive(0))?;
        let mut pool = generate_detection_scenes(&skewed, self.n_pool, scenes.derive(1))?;
        let mut test = generate_detection_scenes(&uniform, self.n_test, scenes.derive(2))?;
        attach_appearance(&mut sim, &sim_dom, appearance.derive(0))?;
        attach_appearance(&mut pool, &pool_dom, appearance.derive(1))?;
        attach_appearance(&mut test, &test_dom, appearance.derive(2))?;
        Ok(DetectionDatasets { n_classes, sim, pool, test, pool_priors })
    }
}

/// `label,x0,x1,...` rows with a header.
pub fn write_classification_csv(examples: &[Example]) -> String {
    let dim = examples.first().map_or(0, |e| e.input.len());
    let mut out = String::from("label");
    for i in 0..dim {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for e in examples {
        out.push_str(&e.label.to_string());
        for v in &e.input {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Ground-truth sidecar for scene dumps:
///
/// ```text
/// # scene-labels v1
/// image <id> objects <n>
/// object <class> <x_min> <y_min> <x_max> <y_max>
/// ```
pub fn write_labels_sidecar(scenes: &[Scene]) -> String {
    let mut out = String::from("# scene-labels v1\n");
    for s in scenes {
        out.push_str(&format!("image {} objects {}\n", s.id, s.objects.len()));
        for o in &s.objects {
            let b = o.bbox;
            out.push_str(&format!("object {} {} {} {} {}\n", o.class, b.x_min, b.y_min, b.x_max, b.y_max));
        }
    }
    out
}

pub fn read_labels_sidecar(text: &str) -> Result<Vec<(usize, Vec<GroundTruthObject>)>, SynthError> {
    let err = |line: usize, msg: &str| SynthError::Sidecar { line, msg: msg.into() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, "# scene-labels v1")) => {}
        Some((n, _)) => return Err(err(n, "missing `# scene-labels v1` header")),
        None => return Err(err(1, "empty sidecar")),
    }
    let mut out = Vec::new();
    while let Some((n, l)) = lines.next() {
        let f: Vec<&str> = l.split_whitespace().collect();
        let (id, count) = match f.as_slice() {
            ["image", id, "objects", k] => (
                id.parse::<usize>().map_err(|_| err(n, "bad image id"))?,
                k.parse::<usize>().map_err(|_| err(n, "bad object count"))?,
            ),
            _ => return Err(err(n, "expected `image <id> objects <n>`")),
        };
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = lines.next().ok_or_else(|| err(n, "truncated object list"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 6 || f[0] != "object" {
                return Err(err(n, "expected `object <class> x0 y0 x1 y1`"));
            }
            let class = f[1].parse::<usize>().map_err(|_| err(n, "bad class"))?;
            let c: Vec<f64> =
                f[2..].iter().map(|v| v.parse::<f64>().map_err(|_| err(n, "bad coordinate"))).collect::<Result<_, _>>()?;
            let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| err(n, &e.to_string()))?;
            objects.push(GroundTruthObject { class, bbox });
        }
        out.push((id, objects));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::reg_entropy;
    use crate::fusion::{bayesod_inference, FusionConfig, DEFAULT_COV_EPSILON};
    use nalgebra::Matrix4;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        let mut stat = 0.0;
        let mut dof = 0;
        for (&c, &p) in counts.iter().zip(probs) {
            if p == 0.0 {
                assert_eq!(c, 0, "draw from a zero-prior class");
                continue;
            }
            let e = n as f64 * p;
            stat += (c as f64 - e).powi(2) / e;
            dof += 1;
        }
        1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
    }

    fn base_spec() -> ClassificationDomainSpec {
        ClassificationDomainSpec {
            class_means: means_on_sphere(4, 3, 3.0, Seed(1)),
            cov_scale: 1.0,
            class_priors: vec![0.25; 4],
            n_points: 100,
            shift: DomainShift::default(),
        }
    }

    #[test]
    fn single_example() {
        assert_eq!(generate_classification(&base_spec(), 1, Seed(0)).unwrap().len(), 1);
        assert!(generate_classification(&base_spec(), 0, Seed(0)).is_err());
    }

    #[test]
    fn skewed_prior_histogram() {
        let mut spec = base_spec();
        spec.shift.prior_skew = PriorSkew::Explicit { priors: vec![0.9, 0.1, 0.0, 0.0] };
        let data = generate_classification(&spec, 10_000, Seed(7)).unwrap();
        let mut counts = [0usize; 4];
        data.iter().for_each(|e| counts[e.label] += 1);
        assert!(chi_square_p(&counts, &[0.9, 0.1, 0.0, 0.0]) > 0.001, "{counts:?}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ClassificationBenchmarkSpec::default();
        assert_eq!(spec.build(Seed(3)).unwrap(), spec.build(Seed(3)).unwrap());
        assert_ne!(spec.build(Seed(3)).unwrap().pool, spec.build(Seed(4)).unwrap().pool);
        let d = DetectionBenchmarkSpec::default();
        assert_eq!(d.build(Seed(3)).unwrap(), d.build(Seed(3)).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut s = base_spec();
        s.class_priors = vec![0.5, 0.5, 0.5, 0.5];
        assert!(s.validate().is_err());
        let mut s = base_spec();
        s.cov_scale = 0.0;
        assert!(s.validate().is_err());
        let mut s = base_spec();
        s.shift.translation = vec![1.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn dirichlet_is_a_simplex() {
        for s in 0..20 {
            let p = dirichlet(&[0.25; 4], 0.3, Seed(s)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn benchmark_pool_follows_skew_and_sim_is_balanced() {
        let spec = ClassificationBenchmarkSpec { n_pool: 10_000, n_sim: 10_000, ..Default::default() };
        let d = spec.build(Seed(11)).unwrap();
        let hist = |ex: &[Example]| {
            let mut c = vec![0usize; 8];
            ex.iter().for_each(|e| c[e.label] += 1);
            c
        };
        assert!(chi_square_p(&hist(&d.pool), &d.pool_priors) > 0.001);
        assert!(chi_square_p(&hist(&d.sim), &[0.125; 8]) > 0.001);
    }

    fn scene_spec() -> DetectionSceneSpec {
        DetectionSceneSpec::default()
    }

    #[test]
    fn fixed_object_count() {
        let spec = DetectionSceneSpec { objects_min: 1, objects_max: 1, ..scene_spec() };
        let scenes = generate_detection_scenes(&spec, 200, Seed(1)).unwrap();
        assert!(scenes.iter().all(|s| s.objects.len() == 1));
    }

    #[test]
    fn boxes_stay_inside_extent() {
        let spec = DetectionSceneSpec { width: 100.0, height: 70.0, box_min: 5.0, box_max: 70.0, ..scene_spec() };
        for s in generate_detection_scenes(&spec, 500, Seed(2)).unwrap() {
            for o in s.objects {
                let b = o.bbox;
                assert!(0.0 <= b.x_min && b.x_min < b.x_max && b.x_max <= 100.0);
                assert!(0.0 <= b.y_min && b.y_min < b.y_max && b.y_max <= 70.0);
            }
        }
    }

    #[test]
    fn infeasible_box_size_is_rejected() {
        let spec = DetectionSceneSpec { width: 50.0, box_min: 10.0, box_max: 60.0, ..scene_spec() };
        assert!(matches!(generate_detection_scenes(&spec, 1, Seed(0)), Err(SynthError::InfeasibleBoxSize { .. })));
    }

    #[test]
    fn scene_class_histogram_matches_priors() {
        let priors = vec![0.6, 0.3, 0.1];
        let spec = DetectionSceneSpec { class_priors: priors.clone(), ..scene_spec() };
        let mut counts = [0usize; 3];
        for s in generate_detection_scenes(&spec, 1000, Seed(5)).unwrap() {
            s.objects.iter().for_each(|o| counts[o.class] += 1);
        }
        assert!(chi_square_p(&counts, &priors) > 0.001, "{counts:?}");
    }

    fn one_object_scene(side: f64) -> Scene {
        Scene {
            id: 0,
            objects: vec![GroundTruthObject { class: 1, bbox: BBox::new(10.0, 20.0, 10.0 + side, 20.0 + side).unwrap() }],
            appearance: Vec::new(),
        }
    }

    #[test]
    fn noiseless_outputs_reproduce_ground_truth() {
        let spec = DetectionSceneSpec { sigma_box: 0.0, score_noise: 0.0, anchors_per_object: 4, ..scene_spec() };
        let scene = Scene {
            objects: vec![GroundTruthObject { class: 1, bbox: BBox::new(10.3, 20.7, 41.1, 52.9).unwrap() }],
            ..one_object_scene(1.0)
        };
        let anchors = synth_detector_outputs(&scene, &spec, Seed(1));
        assert_eq!(anchors.len(), 4);
        for a in &anchors {
            let (m, c) = a.box_statistics();
            assert_eq!(m, scene.objects[0].bbox.to_vector());
            assert_eq!(c + Matrix4::identity() * DEFAULT_COV_EPSILON, Matrix4::identity() * DEFAULT_COV_EPSILON);
        }
        let fused = bayesod_inference(&anchors, &FusionConfig::default()).unwrap();
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].box_mean, scene.objects[0].bbox.to_vector());
        let expect = Matrix4::identity() * (DEFAULT_COV_EPSILON / 4.0);
        assert!((fused[0].box_cov - expect).amax() < 1e-20);
    }

    #[test]
    fn box_noise_raises_regression_entropy() {
        let mean_entropy = |sigma: f64| {
            let spec = DetectionSceneSpec { sigma_box: sigma, ..scene_spec() };
            let scenes = generate_detection_scenes(&spec, 100, Seed(9)).unwrap();
            let mut total = 0.0;
            let mut n = 0;
            for s in &scenes {
                let anchors = synth_detector_outputs(s, &spec, Seed(s.id as u64));
                for d in bayesod_inference(&anchors, &FusionConfig::default()).unwrap() {
                    total += reg_entropy(&d.box_cov).unwrap();
                    n += 1;
                }
            }
            total / n as f64
        };
        assert!(mean_entropy(1.0) < mean_entropy(4.0));
    }

    #[test]
    fn anchors_overlap_ground_truth() {
        let spec = DetectionSceneSpec { sigma_box: 2.0, anchors_per_object: 1, ..scene_spec() };
        let scene = one_object_scene(32.0);
        let gt = scene.objects[0].bbox;
        let hits = (0..10_000u64)
            .filter(|&s| synth_detector_outputs(&scene, &spec, Seed(s)).iter().all(|a| a.mean_box().iou(&gt) >= 0.5))
            .count();
        assert!(hits as f64 >= 0.95 * 10_000.0, "{hits}");
    }

    #[test]
    fn true_class_scores_dominate() {
        let spec = scene_spec();
        let anchors = synth_detector_outputs(&one_object_scene(30.0), &spec, Seed(3));
        for a in anchors {
            let m = a.mean_scores();
            assert_eq!(crate::learner::argmax(&m), 1);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let scenes = generate_detection_scenes(&scene_spec(), 5, Seed(4)).unwrap();
        let back = read_labels_sidecar(&write_labels_sidecar(&scenes)).unwrap();
        assert_eq!(back.len(), 5);
        for (s, (id, objs)) in scenes.iter().zip(back) {
            assert_eq!(s.id, id);
            assert_eq!(s.objects, objs);
        }
        assert!(matches!(read_labels_sidecar("# scene-labels v1\nimage 0 objects 1\n"), Err(SynthError::Sidecar { .. })));
    }

    #[test]
    fn appearance_is_attached_per_object() {
        let d = DetectionBenchmarkSpec::default().build(Seed(1)).unwrap();
        for s in d.sim.iter().chain(&d.pool).chain(&d.test) {
            assert_eq!(s.appearance.len(), s.objects.len());
            assert!(s.appearance.iter().all(|a| a.len() == 8));
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let data = generate_classification(&base_spec(), 3, Seed(0)).unwrap();
        let csv = write_classification_csv(&data);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("label,x0,x1,x2\n"));
    }
}
