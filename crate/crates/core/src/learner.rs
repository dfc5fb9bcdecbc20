//! Desk-scale Bayesian classifier: a one-hidden-layer network whose hidden
//! activations are dropped out at prediction time too, so repeated forward
//! passes sample the approximate predictive distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::Seed;

pub const DEFAULT_DROPOUT_RATE: f64 = 0.1;
pub const DEFAULT_HIDDEN_DIM: usize = 64;

const INIT_STREAM: u64 = 0x1417;
const TRAIN_STREAM: u64 = 0x7124;
const CHECKPOINT_MAGIC: &str = "mcdropout-checkpoint v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("input has dimension {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("non-finite weights after epoch {0}")]
    NonFinite(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}

/// One labeled input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(input: Vec<f64>, label: usize) -> Self {
        Self { input, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// When set, the rate moves linearly from `learning_rate` (first epoch)
    /// to this value (last epoch).
    pub learning_rate_end: Option<f64>,
    pub batch_size: usize,
    pub seed: Seed,
    /// Continue from the current weights instead of reinitializing.
    pub fine_tune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 0.1, learning_rate_end: None, batch_size: 32, seed: Seed(0), fine_tune: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0");
        }
        if let Some(end) = self.learning_rate_end {
            if !(end.is_finite() && end >= 0.0) {
                return bad("learning_rate_end must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.learning_rate_end {
            Some(end) if self.epochs > 1 => {
                let f = epoch as f64 / (self.epochs - 1) as f64;
                self.learning_rate + (end - self.learning_rate) * f
            }
            _ => self.learning_rate,
        }
    }
}

/// What the active-learning loop needs from a model.
pub trait Learner: Clone {
    fn n_classes(&self) -> usize;

    fn fit(&mut self, examples: &[Example], cfg: &TrainConfig) -> Result<(), LearnerError>;

    /// `t` stochastic forward passes, each a probability vector.
    fn predict_samples(&self, x: &[f64], t: usize, seed: Seed) -> Vec<Vec<f64>>;

    /// Average of `t` stochastic passes.
    fn predict_mean(&self, x: &[f64], t: usize, seed: Seed) -> Vec<f64> {
        let samples = self.predict_samples(x, t, seed);
        let mut mean = vec![0.0; self.n_classes()];
        for s in &samples {
            mean.iter_mut().zip(s).for_each(|(m, p)| *m += p);
        }
        let n = samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Deterministic latent features (pre-softmax logits).
    fn features(&self, x: &[f64]) -> Vec<f64>;
}

/// Parameters are stored flat in the order `w1, b1, w2, b2`, with `w1` as
/// `hidden x input` and `w2` as `classes x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MCDropoutClassifier {
    input_dim: usize,
    hidden_dim: usize,
    n_classes: usize,
    dropout_rate: f64,
    params: Vec<f64>,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MCDropoutClassifier {
    pub fn new(input_dim: usize, hidden_dim: usize, n_classes: usize, dropout_rate: f64, seed: Seed) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && n_classes > 0, "layer sizes must be positive");
        assert!((0.0..1.0).contains(&dropout_rate), "dropout rate must be in [0, 1)");
        let n = hidden_dim * input_dim + hidden_dim + n_classes * hidden_dim + n_classes;
        let mut m = Self { input_dim, hidden_dim, n_classes, dropout_rate, params: vec![0.0; n] };
        m.reinitialize(seed);
        m
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every weight and bias.
    pub fn reinitialize(&mut self, seed: Seed) {
        let mut rng = seed.derive(INIT_STREAM).rng();
        let (b1_end, w2_end) = (self.off_w2(), self.off_b2());
        let in_bound = 1.0 / (self.input_dim as f64).sqrt();
        let hid_bound = 1.0 / (self.hidden_dim as f64).sqrt();
        for (i, p) in self.params.iter_mut().enumerate() {
            let bound = if i < b1_end {
                in_bound
            } else {
                let _ = w2_end;
                hid_bound
            };
            *p = rng.random_range(-bound..=bound);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        assert!((0.0..1.0).contains(&rate));
        self.dropout_rate = rate;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn off_b1(&self) -> usize {
        self.hidden_dim * self.input_dim
    }

    fn off_w2(&self) -> usize {
        self.off_b1() + self.hidden_dim
    }

    fn off_b2(&self) -> usize {
        self.off_w2() + self.n_classes * self.hidden_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<(), LearnerError> {
        if x.len() != self.input_dim {
            return Err(LearnerError::InputDimension { expected: self.input_dim, found: x.len() });
        }
        Ok(())
    }

    /// `mask[j]` multiplies hidden unit `j` (0 for dropped, `1/(1-p)` for kept).
    fn forward(&self, x: &[f64], mask: Option<&[f64]>) -> Activations {
        let (h, d, c) = (self.hidden_dim, self.input_dim, self.n_classes);
        let w1 = &self.params[..self.off_b1()];
        let b1 = &self.params[self.off_b1()..self.off_w2()];
        let w2 = &self.params[self.off_w2()..self.off_b2()];
        let b2 = &self.params[self.off_b2()..];
        let mut pre = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            let row = &w1[j * d..(j + 1) * d];
            pre[j] = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[j] = pre[j].tanh() * mask.map_or(1.0, |m| m[j]);
        }
        let logits = (0..c)
            .map(|k| b2[k] + w2[k * h..(k + 1) * h].iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        Activations { pre, hidden, logits }
    }

    fn draw_mask<R: Rng>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.dropout_rate);
        Some(
            (0..self.hidden_dim)
                .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { keep })
                .collect(),
        )
    }

    /// Mean soft-target cross-entropy over the batch and its gradient with
    /// respect to the flat parameter vector. `masks`, when given, holds one
    /// dropout mask per example.
    pub fn loss_and_gradient(
        &self,
        inputs: &[&[f64]],
        targets: &[Vec<f64>],
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, Vec<f64>) {
        let (h, d, c) = (self.hidden_dim, self.input_dim, self.n_classes);
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = inputs.len() as f64;
        let (ob1, ow2, ob2) = (self.off_b1(), self.off_w2(), self.off_b2());
        for (e, (x, y)) in inputs.iter().zip(targets).enumerate() {
            let mask = masks.map(|m| m[e].as_slice());
            let act = self.forward(x, mask);
            let probs = softmax(&act.logits);
            let lse = log_sum_exp(&act.logits);
            loss += y.iter().zip(&act.logits).map(|(t, l)| -t * (l - lse)).sum::<f64>();
            let ysum: f64 = y.iter().sum();
            let dlogits: Vec<f64> = probs.iter().zip(y).map(|(p, t)| p * ysum - t).collect();
            let w2 = &self.params[ow2..ob2];
            let mut dhidden = vec![0.0; h];
            for k in 0..c {
                grad[ob2 + k] += dlogits[k];
                for j in 0..h {
                    grad[ow2 + k * h + j] += dlogits[k] * act.hidden[j];
                    dhidden[j] += w2[k * h + j] * dlogits[k];
                }
            }
            for j in 0..h {
                let th = act.pre[j].tanh();
                let dpre = dhidden[j] * mask.map_or(1.0, |m| m[j]) * (1.0 - th * th);
                grad[ob1 + j] += dpre;
                for i in 0..d {
                    grad[j * d + i] += dpre * x[i];
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// Max relative error between the analytic gradient and central finite
    /// differences (step `1e-5`) over up to `n_checks` randomly chosen
    /// parameters, with dropout off. Relative error is
    /// `|a - n| / max(|a|, |n|, 1e-5)`; the floor keeps near-zero components
    /// from amplifying finite-difference rounding.
    pub fn gradient_check(&self, batch: &[Example], n_checks: usize, seed: Seed) -> f64 {
        const STEP: f64 = 1e-5;
        let inputs: Vec<&[f64]> = batch.iter().map(|e| e.input.as_slice()).collect();
        let targets: Vec<Vec<f64>> = batch.iter().map(|e| one_hot(e.label, self.n_classes)).collect();
        let (_, analytic) = self.loss_and_gradient(&inputs, &targets, None);
        let mut rng = seed.rng();
        let n = self.params.len();
        let picks = crate::sampling::draw_positions(n, n_checks.min(n), &mut rng);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for i in picks {
            let orig = probe.params[i];
            probe.params[i] = orig + STEP;
            let (lp, _) = probe.loss_and_gradient(&inputs, &targets, None);
            probe.params[i] = orig - STEP;
            let (lm, _) = probe.loss_and_gradient(&inputs, &targets, None);
            probe.params[i] = orig;
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
        }
        worst
    }

    pub fn predict_logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x, None).logits
    }

    pub fn save_checkpoint(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        out.push_str(&format!("input_dim {}\n", self.input_dim));
        out.push_str(&format!("hidden_dim {}\n", self.hidden_dim));
        out.push_str(&format!("n_classes {}\n", self.n_classes));
        out.push_str(&format!("dropout_rate {}\n", self.dropout_rate));
        out.push_str(&format!("params {}\n", self.params.len()));
        for p in &self.params {
            out.push_str(&format!("{p}\n"));
        }
        out
    }

    pub fn load_checkpoint(text: &str) -> Result<Self, LearnerError> {
        let err = |line: usize, msg: &str| LearnerError::Checkpoint { line, msg: msg.into() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(err(1, "missing checkpoint header")),
        }
        let mut field = |name: &str| -> Result<String, LearnerError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            match l.split_once(' ') {
                Some((k, v)) if k == name => Ok(v.to_string()),
                _ => Err(err(n, &format!("expected `{name}`"))),
            }
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|_| err(0, "bad integer"));
        let input_dim = parse_usize(field("input_dim")?)?;
        let hidden_dim = parse_usize(field("hidden_dim")?)?;
        let n_classes = parse_usize(field("n_classes")?)?;
        let dropout_rate: f64 = field("dropout_rate")?.parse().map_err(|_| err(5, "bad dropout rate"))?;
        let count = parse_usize(field("params")?)?;
        let expected = hidden_dim * input_dim + hidden_dim + n_classes * hidden_dim + n_classes;
        if count != expected || input_dim == 0 || hidden_dim == 0 || n_classes == 0 {
            return Err(err(6, "parameter count does not match layer sizes"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(err(5, "dropout rate outside [0, 1)"));
        }
        let params = lines
            .take(count)
            .map(|(n, l)| l.parse::<f64>().map_err(|_| err(n, "bad parameter value")))
            .collect::<Result<Vec<_>, _>>()?;
        if params.len() != count {
            return Err(err(0, "truncated parameter list"));
        }
        Ok(Self { input_dim, hidden_dim, n_classes, dropout_rate, params })
    }
}

impl Learner for MCDropoutClassifier {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Mini-batch gradient descent on cross-entropy with dropout active.
    fn fit(&mut self, examples: &[Example], cfg: &TrainConfig) -> Result<(), LearnerError> {
        cfg.validate()?;
        if examples.is_empty() {
            return Err(LearnerError::EmptyTrainingSet);
        }
        for e in examples {
            self.check_input(&e.input)?;
            if e.label >= self.n_classes {
                return Err(LearnerError::LabelOutOfRange { label: e.label, n_classes: self.n_classes });
            }
        }
        if !cfg.fine_tune {
            self.reinitialize(cfg.seed);
        }
        let mut rng = cfg.seed.derive(TRAIN_STREAM).rng();
        let targets: Vec<Vec<f64>> = examples.iter().map(|e| one_hot(e.label, self.n_classes)).collect();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for epoch in 0..cfg.epochs {
            let rate = cfg.rate_at(epoch);
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let inputs: Vec<&[f64]> = chunk.iter().map(|&i| examples[i].input.as_slice()).collect();
                let tgt: Vec<Vec<f64>> = chunk.iter().map(|&i| targets[i].clone()).collect();
                let masks: Option<Vec<Vec<f64>>> = if self.dropout_rate > 0.0 {
                    Some(chunk.iter().map(|_| self.draw_mask(&mut rng).unwrap()).collect())
                } else {
                    None
                };
                let (_, grad) = self.loss_and_gradient(&inputs, &tgt, masks.as_deref());
                self.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= rate * g);
            }
            if self.params.iter().any(|p| !p.is_finite()) {
                return Err(LearnerError::NonFinite(epoch));
            }
        }
        Ok(())
    }

    fn predict_samples(&self, x: &[f64], t: usize, seed: Seed) -> Vec<Vec<f64>> {
        let mut rng = seed.rng();
        (0..t)
            .map(|_| {
                let mask = self.draw_mask(&mut rng);
                softmax(&self.forward(x, mask.as_deref()).logits)
            })
            .collect()
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        self.predict_logits(x)
    }
}

pub fn one_hot(label: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[label] = 1.0;
    v
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = Seed(seed).rng();
        let noise = Normal::new(0.0, 0.5).unwrap();
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -2.0 } else { 2.0 };
                Example::new(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)], label)
            })
            .collect()
    }

    fn accuracy(m: &MCDropoutClassifier, data: &[Example]) -> f64 {
        let ok = data.iter().filter(|e| argmax(&m.predict_logits(&e.input)) == e.label).count();
        ok as f64 / data.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(200, 1);
        let mut m = MCDropoutClassifier::new(2, DEFAULT_HIDDEN_DIM, 2, DEFAULT_DROPOUT_RATE, Seed(3));
        m.fit(&data, &TrainConfig { seed: Seed(4), ..Default::default() }).unwrap();
        assert!(accuracy(&m, &data) >= 0.99);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = blobs(64, 2);
        let fresh = MCDropoutClassifier::new(2, 16, 2, 0.1, Seed(1));
        let cfg = TrainConfig { epochs: 5, seed: Seed(9), ..Default::default() };
        let (mut a, mut b) = (fresh.clone(), fresh);
        a.fit(&data, &cfg).unwrap();
        b.fit(&data, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let data = blobs(32, 3);
        let mut m = MCDropoutClassifier::new(2, 8, 2, 0.1, Seed(1));
        let before = m.params().to_vec();
        m.fit(&data, &TrainConfig { learning_rate: 0.0, epochs: 3, ..Default::default() }).unwrap();
        assert_eq!(m.params(), before.as_slice());
    }

    #[test]
    fn retrain_ignores_prior_state() {
        let data = blobs(32, 3);
        let cfg = TrainConfig { epochs: 3, fine_tune: false, seed: Seed(5), ..Default::default() };
        let mut a = MCDropoutClassifier::new(2, 8, 2, 0.1, Seed(1));
        let mut b = MCDropoutClassifier::new(2, 8, 2, 0.1, Seed(77));
        b.fit(&blobs(16, 8), &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        a.fit(&data, &cfg).unwrap();
        b.fit(&data, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let mut m = MCDropoutClassifier::new(2, 4, 2, 0.1, Seed(1));
        let cfg = TrainConfig::default();
        assert_eq!(m.fit(&[], &cfg), Err(LearnerError::EmptyTrainingSet));
        assert!(matches!(
            m.fit(&[Example::new(vec![0.0, 0.0], 2)], &cfg),
            Err(LearnerError::LabelOutOfRange { .. })
        ));
        assert!(matches!(m.fit(&[Example::new(vec![0.0], 0)], &cfg), Err(LearnerError::InputDimension { .. })));
        assert!(m.fit(&blobs(4, 1), &TrainConfig { epochs: 0, ..cfg }).is_err());
    }

    #[test]
    fn diverging_training_is_reported() {
        let data = blobs(16, 1);
        let mut m = MCDropoutClassifier::new(2, 4, 2, 0.0, Seed(1));
        let r = m.fit(&data, &TrainConfig { learning_rate: f64::MAX, epochs: 50, batch_size: 1, ..Default::default() });
        assert!(matches!(r, Err(LearnerError::NonFinite(_))));
    }

    #[test]
    fn samples_are_simplexes() {
        let m = MCDropoutClassifier::new(3, 16, 4, 0.3, Seed(2));
        for s in m.predict_samples(&[0.3, -1.0, 2.0], 50, Seed(1)) {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn no_dropout_means_identical_samples() {
        let m = MCDropoutClassifier::new(3, 16, 4, 0.0, Seed(2));
        let s = m.predict_samples(&[0.3, -1.0, 2.0], 5, Seed(1));
        assert!(s.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn sample_variance_grows_with_dropout() {
        let base = MCDropoutClassifier::new(3, 32, 3, 0.0, Seed(11));
        let x = [0.5, -0.7, 1.1];
        let variance = |rate: f64| {
            let mut m = base.clone();
            m.set_dropout_rate(rate);
            let s = m.predict_samples(&x, 1000, Seed(3));
            let mean = m.predict_mean(&x, 1000, Seed(3));
            (0..3).map(|k| s.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / 1000.0).sum::<f64>()
        };
        let (v0, v1, v5) = (variance(0.0), variance(0.1), variance(0.5));
        assert!(v0 < 1e-20);
        assert!(v0 < v1 && v1 < v5, "{v0} {v1} {v5}");
    }

    #[test]
    fn predict_mean_matches_running_average() {
        let m = MCDropoutClassifier::new(3, 16, 3, 0.1, Seed(2));
        let x = [1.0, 0.2, -0.4];
        let big = m.predict_mean(&x, 10_000, Seed(1));
        let samples = m.predict_samples(&x, 500, Seed(99));
        let avg: Vec<f64> = (0..3).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / 500.0).collect();
        for k in 0..3 {
            assert!((big[k] - avg[k]).abs() < 2e-2);
        }
    }

    #[test]
    fn features_are_logits() {
        let m = MCDropoutClassifier::new(3, 16, 5, 0.1, Seed(2));
        let f = m.features(&[1.0, 2.0, 3.0]);
        assert_eq!(f.len(), 5);
        let p = softmax(&f);
        let no_drop = {
            let mut z = m.clone();
            z.set_dropout_rate(0.0);
            z.predict_samples(&[1.0, 2.0, 3.0], 1, Seed(0)).remove(0)
        };
        assert_eq!(p, no_drop);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for s in 0..5 {
            let m = MCDropoutClassifier::new(4, 12, 3, 0.1, Seed(s));
            let mut rng = Seed(100 + s).rng();
            let batch: Vec<Example> = (0..8)
                .map(|i| Example::new((0..4).map(|_| rng.random_range(-2.0..2.0)).collect(), i % 3))
                .collect();
            let err = m.gradient_check(&batch, 60, Seed(s));
            assert!(err < 1e-4, "seed {s}: {err}");
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut m = MCDropoutClassifier::new(3, 5, 4, 0.0, Seed(1));
        let off = m.off_w2();
        m.params_mut()[off..].iter_mut().for_each(|p| *p = 0.0);
        let x = [0.3, 0.1, -0.2];
        let (_, g) = m.loss_and_gradient(&[&x], &[vec![0.25; 4]], None);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-15);
    }

    #[test]
    fn hand_computed_gradient_for_two_class_linear_case() {
        // One hidden unit per input, identity-like first layer with tiny
        // pre-activations so tanh' ~ 1; compare output-layer gradients to the
        // closed form (p - y) h^T and db2 = p - y.
        let mut m = MCDropoutClassifier::new(2, 2, 2, 0.0, Seed(0));
        let p = m.params_mut();
        p.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.5, -0.25, -0.75, 1.0, 0.1, -0.2]);
        let x = [0.3, -0.6];
        let h = [0.3f64.tanh(), (-0.6f64).tanh()];
        let z = [0.5 * h[0] - 0.25 * h[1] + 0.1, -0.75 * h[0] + h[1] - 0.2];
        let e = [z[0].exp(), z[1].exp()];
        let prob = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
        let y = [0.0, 1.0];
        let d = [prob[0] - y[0], prob[1] - y[1]];
        let (_, g) = m.loss_and_gradient(&[&x], &[y.to_vec()], None);
        let expect_w2 = [d[0] * h[0], d[0] * h[1], d[1] * h[0], d[1] * h[1]];
        for k in 0..4 {
            assert!((g[6 + k] - expect_w2[k]).abs() < 1e-8);
        }
        assert!((g[10] - d[0]).abs() < 1e-8 && (g[11] - d[1]).abs() < 1e-8);
        // first layer: dW1[j][i] = (W2^T d)_j (1 - h_j^2) x_i
        let back = [0.5 * d[0] - 0.75 * d[1], -0.25 * d[0] + d[1]];
        for j in 0..2 {
            let dpre = back[j] * (1.0 - h[j] * h[j]);
            for i in 0..2 {
                assert!((g[j * 2 + i] - dpre * x[i]).abs() < 1e-8);
            }
            assert!((g[4 + j] - dpre).abs() < 1e-8);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut m = MCDropoutClassifier::new(3, 7, 4, 0.1, Seed(5));
        m.fit(&[Example::new(vec![0.1, 0.2, 0.3], 1)], &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let text = m.save_checkpoint();
        let back = MCDropoutClassifier::load_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        assert!(back.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(MCDropoutClassifier::load_checkpoint("garbage").is_err());
        let short: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(MCDropoutClassifier::load_checkpoint(&short).is_err());
    }

    #[test]
    fn linear_schedule_interpolates() {
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e-5, learning_rate_end: Some(1e-3), ..Default::default() };
        assert_eq!(cfg.rate_at(0), 1e-5);
        assert!((cfg.rate_at(4) - 1e-3).abs() < 1e-18);
    }
}
