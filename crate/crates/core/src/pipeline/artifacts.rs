//! Run artifacts: the per-run learning-curve CSV and the JSON run manifest.
//!
//! Both are pure functions of the outcome and config, with no timestamps or
//! host details, so a repeated run produces byte-identical files.

use serde::{Deserialize, Serialize};

use super::{GapReport, LearningCurve, RunOutcome, RunStatus};
use crate::config::ExperimentConfig;
use crate::sampling::Strategy;

pub const CSV_HEADER: &str = "run_seed,strategy,iteration,labeled_count,labeled_fraction,metric,icv";
pub const MANIFEST_FORMAT: &str = "simreal-run-manifest v1";

pub fn curve_csv(outcome: &RunOutcome) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &outcome.curve.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            outcome.run_seed,
            outcome.strategy.name(),
            r.iteration,
            r.labeled_count,
            r.labeled_fraction,
            r.metric,
            r.icv
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub strategy: Strategy,
    pub run_seed: u64,
    pub dataset_key: String,
    pub status: RunStatus,
    pub pool_size: usize,
    pub sim_perf: f64,
    pub real_perf: f64,
    pub gap_report: GapReport,
    pub curve: LearningCurve,
    /// Ids labeled at iterations 1..N.
    pub selections: Vec<Vec<usize>>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, outcome: &RunOutcome) -> Result<Self, super::MetricError> {
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            strategy: outcome.strategy,
            run_seed: outcome.run_seed,
            dataset_key: config.dataset_key(),
            status: outcome.status.clone(),
            pool_size: outcome.pool_size,
            sim_perf: outcome.sim_perf,
            real_perf: outcome.real_perf,
            gap_report: outcome.gap_report(config.run.gap_level)?,
            curve: outcome.curve.clone(),
            selections: outcome.selections.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.format != MANIFEST_FORMAT {
            return Err(format!("unsupported manifest format `{}`", m.format));
        }
        Ok(m)
    }

    /// Gap report recomputed from the stored curve and references.
    pub fn recompute_gap_report(&self) -> Result<GapReport, super::MetricError> {
        super::gap_report(&self.curve, self.sim_perf, self.real_perf, self.config.run.gap_level)
    }
}
