//! Batch selection over the unlabeled pool.
//!
//! The proposed strategy filters the pool with a uniform sub-sample first and
//! then keeps the top-B scored items inside it (`subsample_topn`). The other
//! strategies are the usual baselines. Strategies that work on feature or
//! probability arrays return positions into those arrays; id-keyed
//! strategies return ids.

mod batchbald;
mod clue;
mod coreset;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::Seed;

pub use batchbald::{bald_score, select_batchbald};
pub use clue::{select_clue, ClueSelection, CLUE_MAX_ITERATIONS};
pub use coreset::{covering_radius, select_coreset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("batch size {batch} exceeds the {available} available items")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("sub-sample too small for batch: {subsample} items drawn, batch of {batch}")]
    SubsampleTooSmall { subsample: usize, batch: usize },
    #[error("sub-sample fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mutual information undefined: need at least 2 MC samples per item, found {0}")]
    MutualInformationUndefined(usize),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error("non-finite score for id {0}")]
    NonFiniteScore(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Topn,
    SubsampleTopn,
    Coreset,
    Batchbald,
    Clue,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Random,
        Strategy::Topn,
        Strategy::SubsampleTopn,
        Strategy::Coreset,
        Strategy::Batchbald,
        Strategy::Clue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Topn => "topn",
            Strategy::SubsampleTopn => "subsample_topn",
            Strategy::Coreset => "coreset",
            Strategy::Batchbald => "batchbald",
            Strategy::Clue => "clue",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                format!("unknown strategy `{s}`, expected one of: {}", names.join(", "))
            })
    }
}

pub const DEFAULT_MC_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub subsample_fraction: f64,
    pub mc_count: usize,
    /// Salt mixed into every selection stream on top of the run seed.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SubsampleTopn,
            batch_size: 20,
            subsample_fraction: 0.5,
            mc_count: DEFAULT_MC_COUNT,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("selection.batch_size must be >= 1".into());
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(format!("selection.subsample_fraction must be in (0, 1], got {}", self.subsample_fraction));
        }
        if self.mc_count == 0 {
            return Err("selection.mc_count must be >= 1".into());
        }
        Ok(())
    }
}

fn check_batch(batch: usize, available: usize) -> Result<(), SelectionError> {
    if batch == 0 {
        return Err(SelectionError::ZeroBatch);
    }
    if batch > available {
        return Err(SelectionError::BatchTooLarge { batch, available });
    }
    Ok(())
}

/// Partial Fisher-Yates: for `i` in `0..k`, swap position `i` with a uniform
/// position in `i..n` drawn by `rng.random_range(i..n)`. The first `k`
/// entries of the shuffled index vector are returned, in draw order.
pub fn draw_positions<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

/// Uniform sample of `batch` ids without replacement.
pub fn select_random(pool_ids: &[usize], batch: usize, seed: Seed) -> Result<Vec<usize>, SelectionError> {
    check_batch(batch, pool_ids.len())?;
    let mut rng = seed.rng();
    Ok(draw_positions(pool_ids.len(), batch, &mut rng).into_iter().map(|p| pool_ids[p]).collect())
}

/// Ids of the `batch` largest scores, sorted by descending score; ties go to
/// the smaller id.
pub fn select_topn(scores: &[(usize, f64)], batch: usize) -> Result<Vec<usize>, SelectionError> {
    check_batch(batch, scores.len())?;
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(SelectionError::NonFiniteScore(*id));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(batch).map(|(id, _)| id).collect())
}

pub fn subsample_size(pool_len: usize, fraction: f64) -> usize {
    ((fraction * pool_len as f64).ceil() as usize).min(pool_len)
}

/// The uniform filtering step: `ceil(p * |pool|)` ids drawn without
/// replacement. Fails when the draw cannot hold a batch.
pub fn subsample(pool_ids: &[usize], fraction: f64, batch: usize, seed: Seed) -> Result<Vec<usize>, SelectionError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SelectionError::InvalidFraction(fraction));
    }
    if batch == 0 {
        return Err(SelectionError::ZeroBatch);
    }
    let size = subsample_size(pool_ids.len(), fraction);
    if size < batch {
        return Err(SelectionError::SubsampleTooSmall { subsample: size, batch });
    }
    let mut rng = seed.rng();
    Ok(draw_positions(pool_ids.len(), size, &mut rng).into_iter().map(|p| pool_ids[p]).collect())
}

/// Sub-sample the pool uniformly, score only the drawn ids, keep the TopN.
/// `score_fn` receives the sub-sample and returns one score per id.
pub fn select_subsample_topn<F>(
    pool_ids: &[usize],
    score_fn: F,
    fraction: f64,
    batch: usize,
    seed: Seed,
) -> Result<Vec<usize>, SelectionError>
where
    F: FnOnce(&[usize]) -> Vec<f64>,
{
    let drawn = subsample(pool_ids, fraction, batch, seed)?;
    let scores = score_fn(&drawn);
    if scores.len() != drawn.len() {
        return Err(SelectionError::Inconsistent(format!(
            "{} scores for {} sub-sampled ids",
            scores.len(),
            drawn.len()
        )));
    }
    let pairs: Vec<(usize, f64)> = drawn.into_iter().zip(scores).collect();
    select_topn(&pairs, batch)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dims(features: &[Vec<f64>], dim: usize) -> Result<(), SelectionError> {
    match features.iter().find(|f| f.len() != dim) {
        Some(f) => Err(SelectionError::DimensionMismatch { expected: dim, found: f.len() }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_examples() {
        let pool: Vec<usize> = (10..20).collect();
        let mut all = select_random(&pool, 10, Seed(3)).unwrap();
        all.sort_unstable();
        assert_eq!(all, pool);
        assert_eq!(select_random(&pool, 0, Seed(3)), Err(SelectionError::ZeroBatch));
        assert_eq!(
            select_random(&pool, 11, Seed(3)),
            Err(SelectionError::BatchTooLarge { batch: 11, available: 10 })
        );
    }

    #[test]
    fn random_single_picks_are_uniform() {
        let pool: Vec<usize> = (0..10).collect();
        let mut counts = [0usize; 10];
        for rep in 0..10_000u64 {
            counts[select_random(&pool, 1, Seed(rep)).unwrap()[0]] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 9 dof, upper 0.001 quantile
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn topn_examples() {
        let s = [(0, 3.0), (1, 1.0), (2, 2.0)];
        assert_eq!(select_topn(&s, 2).unwrap(), vec![0, 2]);
        let eq = [(5, 1.0), (2, 1.0), (9, 1.0)];
        assert_eq!(select_topn(&eq, 2).unwrap(), vec![2, 5]);
        assert_eq!(select_topn(&s, 3).unwrap(), vec![0, 2, 1]);
        assert!(select_topn(&s, 4).is_err());
        assert_eq!(select_topn(&[(4, f64::NAN)], 1), Err(SelectionError::NonFiniteScore(4)));
    }

    #[test]
    fn subsample_topn_matches_independent_redraw() {
        let pool: Vec<usize> = (0..100).collect();
        let seed = Seed(2024);
        let got = select_subsample_topn(&pool, |ids| ids.iter().map(|&i| i as f64).collect(), 0.5, 5, seed).unwrap();

        // Independent re-draw of the documented procedure.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut idx: Vec<usize> = (0..100).collect();
        for i in 0..50 {
            let j = rng.random_range(i..100);
            idx.swap(i, j);
        }
        let mut drawn = idx[..50].to_vec();
        drawn.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(got, drawn[..5].to_vec());
    }

    #[test]
    fn subsample_too_small_is_an_error() {
        let pool: Vec<usize> = (0..100).collect();
        let r = select_subsample_topn(&pool, |ids| vec![0.0; ids.len()], 0.01, 2, Seed(1));
        assert_eq!(r, Err(SelectionError::SubsampleTooSmall { subsample: 1, batch: 2 }));
        assert_eq!(subsample(&pool, 0.0, 1, Seed(1)), Err(SelectionError::InvalidFraction(0.0)));
        assert_eq!(subsample(&pool, 1.5, 1, Seed(1)), Err(SelectionError::InvalidFraction(1.5)));
    }

    #[test]
    fn subsample_size_rounds_up() {
        assert_eq!(subsample_size(2000, 0.01), 20);
        assert_eq!(subsample_size(1999, 0.01), 20);
        assert_eq!(subsample_size(3, 0.5), 2);
        assert_eq!(subsample_size(7, 1.0), 7);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        let e = "entropy".parse::<Strategy>().unwrap_err();
        assert!(e.contains("entropy"));
    }

    fn arb_scores() -> impl proptest::strategy::Strategy<Value = Vec<(usize, f64)>> {
        prop::collection::vec(0..20i32, 1..60).prop_map(|v| {
            v.into_iter().enumerate().map(|(i, s)| (i * 3 + 1, s as f64 * 0.5)).collect()
        })
    }

    proptest! {
        #[test]
        fn subsample_topn_with_full_fraction_is_topn(scores in arb_scores(), b in 1usize..60, seed in any::<u64>()) {
            let b = b.min(scores.len());
            let ids: Vec<usize> = scores.iter().map(|s| s.0).collect();
            let lookup: std::collections::HashMap<usize, f64> = scores.iter().copied().collect();
            let ss = select_subsample_topn(&ids, |d| d.iter().map(|i| lookup[i]).collect(), 1.0, b, Seed(seed)).unwrap();
            prop_assert_eq!(ss, select_topn(&scores, b).unwrap());
        }

        #[test]
        fn subsample_topn_is_topn_within_the_draw(scores in arb_scores(), frac in 0.05..1.0f64, seed in any::<u64>()) {
            let ids: Vec<usize> = scores.iter().map(|s| s.0).collect();
            let lookup: std::collections::HashMap<usize, f64> = scores.iter().copied().collect();
            let drawn = subsample(&ids, frac, 1, Seed(seed)).unwrap();
            let restricted: Vec<(usize, f64)> = drawn.iter().map(|i| (*i, lookup[i])).collect();
            let b = 1 + drawn.len() / 2;
            let got = select_subsample_topn(&ids, |d| d.iter().map(|i| lookup[i]).collect(), frac, b, Seed(seed)).unwrap();
            prop_assert!(got.iter().all(|g| drawn.contains(g)));
            prop_assert_eq!(got, select_topn(&restricted, b).unwrap());
        }

        #[test]
        fn id_strategies_return_distinct_pool_ids(n in 1usize..80, b in 1usize..80, seed in any::<u64>()) {
            let b = b.min(n);
            let pool: Vec<usize> = (0..n).map(|i| i * 7 + 2).collect();
            let scores: Vec<(usize, f64)> = pool.iter().map(|&i| (i, ((i * 31) % 11) as f64)).collect();
            let lookup: std::collections::HashMap<usize, f64> = scores.iter().copied().collect();
            let outs = vec![
                select_random(&pool, b, Seed(seed)).unwrap(),
                select_topn(&scores, b).unwrap(),
                select_subsample_topn(&pool, |d| d.iter().map(|i| lookup[i]).collect(), 1.0, b, Seed(seed)).unwrap(),
            ];
            for out in outs {
                let mut s = out.clone();
                s.sort_unstable();
                s.dedup();
                prop_assert_eq!(s.len(), b);
                prop_assert!(out.iter().all(|i| pool.contains(i)));
            }
            prop_assert_eq!(select_random(&pool, b, Seed(seed)).unwrap(), select_random(&pool, b, Seed(seed)).unwrap());
        }
    }
}
