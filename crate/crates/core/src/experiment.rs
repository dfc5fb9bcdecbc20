//! Build datasets and tracks from an [`ExperimentConfig`] and run cells.
//!
//! The dataset of run seed `s` is generated from `Seed(s).derive(0)`, so all
//! strategies run with the same seed see the same sim set, pool and test set.

use crate::config::{ExperimentConfig, TrackKind};
use crate::learner::MCDropoutClassifier;
use crate::pipeline::{
    run_al, ClassificationOracle, ClassificationTrack, DetectionOracle, DetectionTrack, LoopError, RunOutcome,
};
use crate::sampling::Strategy;
use crate::seed::Seed;

const S_DATA: u64 = 0;
const S_PROTOTYPE: u64 = 7;

pub fn dataset_seed(run_seed: u64) -> Seed {
    Seed(run_seed).derive(S_DATA)
}

pub fn classification_track(cfg: &ExperimentConfig, run_seed: u64) -> Result<ClassificationTrack<MCDropoutClassifier>, LoopError> {
    let data = cfg.data.build(dataset_seed(run_seed))?;
    let prototype = MCDropoutClassifier::new(
        cfg.data.dim,
        cfg.learner.hidden_dim,
        cfg.data.n_classes,
        cfg.learner.dropout_rate,
        Seed(run_seed).derive(S_PROTOTYPE),
    );
    Ok(ClassificationTrack { data, prototype, mc_samples: cfg.learner.mc_samples })
}

pub fn detection_track(cfg: &ExperimentConfig, run_seed: u64) -> Result<DetectionTrack<MCDropoutClassifier>, LoopError> {
    let spec = &cfg.detection;
    let data = spec.build(dataset_seed(run_seed))?;
    let prototype = MCDropoutClassifier::new(
        spec.appearance_dim,
        cfg.learner.hidden_dim,
        spec.scene.n_classes(),
        cfg.learner.dropout_rate,
        Seed(run_seed).derive(S_PROTOTYPE),
    );
    Ok(DetectionTrack {
        data,
        prototype,
        mc_samples: cfg.learner.mc_samples,
        anchors_per_object: spec.scene.anchors_per_object,
        sigma_box: spec.scene.sigma_box,
        box_uncertainty_gain: spec.box_uncertainty_gain,
        fusion: cfg.fusion,
        acquisition: cfg.acquisition,
        iou_threshold: cfg.run.map_iou_threshold,
    })
}

/// Run one `(strategy, seed)` cell.
pub fn run_cell(cfg: &ExperimentConfig, strategy: Strategy, run_seed: u64) -> Result<RunOutcome, LoopError> {
    cfg.validate().map_err(|e| LoopError::Config(e.to_string()))?;
    let run_cfg = cfg.run_config(strategy);
    match cfg.track {
        TrackKind::Classification => {
            let track = classification_track(cfg, run_seed)?;
            let oracle = ClassificationOracle(&track.data.pool);
            run_al(&run_cfg, &track, &oracle, run_seed)
        }
        TrackKind::Detection => {
            let track = detection_track(cfg, run_seed)?;
            let oracle = DetectionOracle(&track.data.pool);
            run_al(&run_cfg, &track, &oracle, run_seed)
        }
    }
}

/// Run several cells on scoped threads; results come back in input order.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[(Strategy, u64)],
    threads: usize,
) -> Vec<Result<RunOutcome, LoopError>> {
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<RunOutcome, LoopError>>> = (0..cells.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (strategy, seed) = cells[i];
                let r = run_cell(cfg, strategy, seed);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every cell ran")).collect()
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
