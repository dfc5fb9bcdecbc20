//! The active-learning loop: train on sim, then repeatedly score the real
//! pool, select a batch, have the oracle label it, fine-tune and evaluate.
//!
//! Seed streams under the run seed `s`:
//!
//! | purpose                       | seed                                  |
//! |-------------------------------|---------------------------------------|
//! | initial training              | `s.derive(1)`                         |
//! | real-only reference training  | `s.derive(2)`                         |
//! | evaluation (every iteration)  | `s.derive(3)`                         |
//! | pool scoring at iteration `k` | `s.derive_path(&[4, k])`              |
//! | selection at iteration `k`    | `s.derive_path(&[5, k, salt])`        |
//! | fine-tuning at iteration `k`  | `s.derive_path(&[6, k])`              |
//!
//! Scoring, training and evaluation streams do not depend on the strategy, so
//! iteration 0 is identical across strategies and two strategies that pick
//! the same ids produce the same curve.

pub mod artifacts;
pub mod curve;
pub mod metrics;
pub mod track;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionError;
use crate::fusion::FusionError;
use crate::learner::{LearnerError, TrainConfig};
use crate::sampling::{
    select_batchbald, select_clue, select_coreset, select_random, select_subsample_topn, select_topn, SelectionConfig,
    SelectionError, Strategy,
};
use crate::seed::Seed;
use crate::synthdata::SynthError;

pub use curve::{CurveRecord, LearningCurve};
pub use metrics::{gap_report, GapReport, MetricError};
pub use track::{ClassificationOracle, ClassificationTrack, DetectionOracle, DetectionTrack, Oracle, Track};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
}

/// Training schedule of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Epochs for the sim-trained start model and for from-scratch training.
    pub initial_epochs: usize,
    /// Epochs per fine-tuning round.
    pub epochs: usize,
    pub learning_rate: f64,
    pub learning_rate_end: Option<f64>,
    pub batch_size: usize,
    /// Continue from the previous snapshot each iteration instead of
    /// retraining from scratch.
    pub fine_tune: bool,
    /// Train on sim plus labeled real data; when off, real data only.
    pub replay: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            initial_epochs: 30,
            epochs: 5,
            learning_rate: 0.05,
            learning_rate_end: None,
            batch_size: 32,
            fine_tune: true,
            replay: true,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, epochs: usize, seed: Seed) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: self.learning_rate,
            learning_rate_end: self.learning_rate_end,
            batch_size: self.batch_size,
            seed,
            fine_tune: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.initial_epochs == 0 || self.epochs == 0 {
            return Err("train.initial_epochs and train.epochs must be >= 1".into());
        }
        self.train_config(1, Seed(0)).validate().map_err(|e| format!("train: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ALRunConfig {
    pub iterations: usize,
    pub selection: SelectionConfig,
    pub train: TrainSettings,
}

impl ALRunConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        self.selection.validate().map_err(LoopError::Config)?;
        self.train.validate().map_err(LoopError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Complete,
    /// The pool held fewer than `batch_size` items before this iteration.
    Truncated { at_iteration: usize },
    /// An error ended the run; the curve holds the completed iterations.
    Failed { at_iteration: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_seed: u64,
    pub strategy: Strategy,
    pub pool_size: usize,
    pub curve: LearningCurve,
    /// Metric of the sim-trained model (iteration 0).
    pub sim_perf: f64,
    /// Metric of a model trained on the fully labeled real pool only.
    pub real_perf: f64,
    /// Ids selected at iterations 1..N, in selection order.
    pub selections: Vec<Vec<usize>>,
    pub status: RunStatus,
}

impl RunOutcome {
    pub fn gap_report(&self, level: f64) -> Result<GapReport, MetricError> {
        gap_report(&self.curve, self.sim_perf, self.real_perf, level)
    }
}

const S_INIT: u64 = 1;
const S_REAL: u64 = 2;
const S_EVAL: u64 = 3;
const S_SCORE: u64 = 4;
const S_SELECT: u64 = 5;
const S_TRAIN: u64 = 6;

/// Real-only reference: a fresh model trained on every pool item with its
/// oracle label.
pub fn real_reference<T: Track, O: Oracle<Label = T::Label>>(
    cfg: &ALRunConfig,
    track: &T,
    oracle: &O,
    seed: Seed,
) -> Result<f64, LoopError> {
    let all: Vec<(usize, T::Label)> = track.pool_ids().into_iter().map(|id| (id, oracle.annotate(id))).collect();
    let model = track.train(None, &all, false, &cfg.train.train_config(cfg.train.initial_epochs, seed.derive(S_REAL)))?;
    track.evaluate(&model, seed.derive(S_EVAL))
}

/// Pick `batch_size` ids out of `pool`.
pub fn select_batch<T: Track>(
    track: &T,
    model: &T::Model,
    pool: &[usize],
    labeled: &[usize],
    cfg: &SelectionConfig,
    score_seed: Seed,
    select_seed: Seed,
) -> Result<Vec<usize>, LoopError> {
    let b = cfg.batch_size;
    let positions_to_ids = |p: Vec<usize>| p.into_iter().map(|i| pool[i]).collect::<Vec<_>>();
    Ok(match cfg.strategy {
        Strategy::Random => select_random(pool, b, select_seed)?,
        Strategy::Topn => {
            let scores = track.uncertainty(model, pool, score_seed)?;
            select_topn(&pool.iter().copied().zip(scores).collect::<Vec<_>>(), b)?
        }
        Strategy::SubsampleTopn => {
            let mut err = None;
            let picks = select_subsample_topn(
                pool,
                |ids| match track.uncertainty(model, ids, score_seed) {
                    Ok(s) => s,
                    Err(e) => {
                        err = Some(e);
                        vec![0.0; ids.len()]
                    }
                },
                cfg.subsample_fraction,
                b,
                select_seed,
            )?;
            if let Some(e) = err {
                return Err(e);
            }
            picks
        }
        Strategy::Coreset => {
            let mut centers = track.sim_features(model);
            centers.extend(track.features(model, labeled));
            positions_to_ids(select_coreset(&track.features(model, pool), &centers, b)?)
        }
        Strategy::Batchbald => {
            positions_to_ids(select_batchbald(&track.prob_samples(model, pool, score_seed)?, b, cfg.mc_count, select_seed)?)
        }
        Strategy::Clue => {
            let u = track.uncertainty(model, pool, score_seed)?;
            positions_to_ids(select_clue(&track.features(model, pool), &u, b, select_seed)?.picks)
        }
    })
}

/// Run the loop for one seed. Errors before iteration 0 is evaluated are
/// returned; later errors end the run with a `Failed` status and the partial
/// curve.
pub fn run_al<T: Track, O: Oracle<Label = T::Label>>(
    cfg: &ALRunConfig,
    track: &T,
    oracle: &O,
    run_seed: u64,
) -> Result<RunOutcome, LoopError> {
    cfg.validate()?;
    let seed = Seed(run_seed);
    let mut pool = track.pool_ids();
    let pool_size = pool.len();
    if pool_size == 0 {
        return Err(LoopError::Config("empty pool".into()));
    }
    let eval_seed = seed.derive(S_EVAL);

    let mut model = track.train(None, &[], true, &cfg.train.train_config(cfg.train.initial_epochs, seed.derive(S_INIT)))?;
    let sim_perf = track.evaluate(&model, eval_seed)?;
    let real_perf = real_reference(cfg, track, oracle, seed)?;

    let mut curve = LearningCurve {
        records: vec![CurveRecord { iteration: 0, labeled_count: 0, labeled_fraction: 0.0, metric: sim_perf, icv: 0.0 }],
        truncated: false,
    };
    let mut labeled: Vec<(usize, T::Label)> = Vec::new();
    let mut selections = Vec::new();
    let mut status = RunStatus::Complete;

    for k in 1..=cfg.iterations {
        if pool.len() < cfg.selection.batch_size {
            curve.truncated = true;
            status = RunStatus::Truncated { at_iteration: k };
            break;
        }
        let step = (|| -> Result<(Vec<usize>, f64, T::Model, f64, Vec<(usize, T::Label)>), LoopError> {
            let labeled_ids: Vec<usize> = labeled.iter().map(|(id, _)| *id).collect();
            let picks = select_batch(
                track,
                &model,
                &pool,
                &labeled_ids,
                &cfg.selection,
                seed.derive_path(&[S_SCORE, k as u64]),
                seed.derive_path(&[S_SELECT, k as u64, cfg.selection.seed]),
            )?;
            check_picks(&picks, &pool, cfg.selection.batch_size)?;
            let mut batch_classes = Vec::new();
            let mut new_labeled = labeled.clone();
            for &id in &picks {
                let label = oracle.annotate(id);
                batch_classes.extend(track.label_classes(&label));
                new_labeled.push((id, label));
            }
            let icv = metrics::inter_class_variation(&batch_classes, track.n_classes());
            let train_seed = seed.derive_path(&[S_TRAIN, k as u64]);
            let next = if cfg.train.fine_tune {
                track.train(Some(&model), &new_labeled, cfg.train.replay, &cfg.train.train_config(cfg.train.epochs, train_seed))?
            } else {
                track.train(None, &new_labeled, cfg.train.replay, &cfg.train.train_config(cfg.train.initial_epochs, train_seed))?
            };
            let metric = track.evaluate(&next, eval_seed)?;
            Ok((picks, icv, next, metric, new_labeled))
        })();
        match step {
            Ok((picks, icv, next, metric, new_labeled)) => {
                pool.retain(|id| !picks.contains(id));
                labeled = new_labeled;
                model = next;
                curve.records.push(CurveRecord {
                    iteration: k,
                    labeled_count: labeled.len(),
                    labeled_fraction: labeled.len() as f64 / pool_size as f64,
                    metric,
                    icv,
                });
                selections.push(picks);
            }
            Err(e) => {
                status = RunStatus::Failed { at_iteration: k, message: e.to_string() };
                break;
            }
        }
    }
    Ok(RunOutcome {
        run_seed,
        strategy: cfg.selection.strategy,
        pool_size,
        curve,
        sim_perf,
        real_perf,
        selections,
        status,
    })
}

fn check_picks(picks: &[usize], pool: &[usize], batch: usize) -> Result<(), LoopError> {
    let mut sorted = picks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != batch || picks.len() != batch {
        return Err(LoopError::Inconsistent(format!("selected {} distinct of {} ids, expected {batch}", sorted.len(), picks.len())));
    }
    if let Some(id) = picks.iter().find(|id| pool.binary_search(id).is_err()) {
        return Err(LoopError::Inconsistent(format!("id {id} is not in the pool")));
    }
    Ok(())
}
