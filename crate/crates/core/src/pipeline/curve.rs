use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    /// Real pool items labeled so far.
    pub labeled_count: usize,
    /// `labeled_count` over the initial pool size.
    pub labeled_fraction: f64,
    pub metric: f64,
    /// Inter-class variation of the batch labeled at this iteration (0 at
    /// iteration 0).
    pub icv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LearningCurve {
    pub records: Vec<CurveRecord>,
    /// The pool ran out before the configured iteration count.
    pub truncated: bool,
}

impl LearningCurve {
    pub fn metrics(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.metric).collect()
    }
}
