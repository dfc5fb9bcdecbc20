//! Greedy BatchBALD.
//!
//! The score of a candidate is the mutual information between the labels of
//! `batch ∪ {candidate}` and the model parameters, approximated by the `T`
//! MC dropout draws:
//!
//! ```text
//! I = H(y_1..y_n) - sum_i E_t[H(p_t(y_i))]
//! ```
//!
//! The joint entropy is evaluated over the label configurations of the batch
//! selected so far. They are enumerated exactly while their count times the
//! class count stays within `mc_count`; beyond that `mc_count`
//! configurations are drawn by ancestral sampling (draw a parameter sample
//! `t`, then every label from `p_t`) and the joint entropy is estimated by
//! importance weighting.

use rand::Rng;

use super::{check_batch, SelectionError};
use crate::seed::Seed;

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Single-item BALD: `H(mean_t p_t) - mean_t H(p_t)`.
pub fn bald_score(samples: &[Vec<f64>]) -> Result<f64, SelectionError> {
    if samples.len() < 2 {
        return Err(SelectionError::MutualInformationUndefined(samples.len()));
    }
    let t = samples.len() as f64;
    let c = samples[0].len();
    let mut mean = vec![0.0; c];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / t);
    }
    let expected: f64 = samples.iter().map(|s| entropy(s)).sum::<f64>() / t;
    Ok(entropy(&mean) - expected)
}

struct Configurations {
    /// `joint[s][t] = prod_{i in batch} p_t(y_i^(s))`
    joint: Vec<Vec<f64>>,
    exact: bool,
}

impl Configurations {
    fn empty(t: usize) -> Self {
        Self { joint: vec![vec![1.0; t]], exact: true }
    }

    /// Joint entropy of the batch extended with `cand`.
    fn extended_entropy(&self, cand: &[Vec<f64>]) -> f64 {
        let t = cand.len();
        let c = cand[0].len();
        let n_cfg = self.joint.len() as f64;
        let mut h = 0.0;
        for row in &self.joint {
            let p_s: f64 = row.iter().sum::<f64>() / t as f64;
            if p_s <= 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for y in 0..c {
                let p_sy: f64 = row.iter().zip(cand).map(|(j, p)| j * p[y]).sum::<f64>() / t as f64;
                if p_sy > 0.0 {
                    inner += p_sy * p_sy.ln();
                }
            }
            // exact: weight P(s) times ratio 1/P(s); sampled: 1/S times 1/P(s)
            h -= if self.exact { inner } else { inner / (p_s * n_cfg) };
        }
        h
    }
}

/// Greedy BatchBALD over per-item MC class-probability samples
/// (`prob_samples[item][t][class]`). Returns positions into `prob_samples`.
pub fn select_batchbald(
    prob_samples: &[Vec<Vec<f64>>],
    batch: usize,
    mc_count: usize,
    seed: Seed,
) -> Result<Vec<usize>, SelectionError> {
    check_batch(batch, prob_samples.len())?;
    let t = prob_samples[0].len();
    if t < 2 {
        return Err(SelectionError::MutualInformationUndefined(t));
    }
    let c = prob_samples[0][0].len();
    for item in prob_samples {
        if item.len() != t {
            return Err(SelectionError::Inconsistent(format!("items have {} and {} MC samples", t, item.len())));
        }
        if item.iter().any(|s| s.len() != c) {
            return Err(SelectionError::Inconsistent("class counts differ".into()));
        }
    }
    let mc_count = mc_count.max(1);
    let cond: Vec<f64> =
        prob_samples.iter().map(|item| item.iter().map(|s| entropy(s)).sum::<f64>() / t as f64).collect();

    let mut rng = seed.rng();
    let mut configs = Configurations::empty(t);
    let mut picked = vec![false; prob_samples.len()];
    let mut picks: Vec<usize> = Vec::with_capacity(batch);
    let mut cond_sum = 0.0;
    for _ in 0..batch {
        let mut best: Option<(usize, f64)> = None;
        for (i, item) in prob_samples.iter().enumerate() {
            if picked[i] {
                continue;
            }
            let score = configs.extended_entropy(item) - cond_sum - cond[i];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (pick, _) = best.expect("batch <= pool size");
        picked[pick] = true;
        picks.push(pick);
        cond_sum += cond[pick];

        if picks.len() == batch {
            break;
        }
        let item = &prob_samples[pick];
        if configs.exact && configs.joint.len() * c <= mc_count {
            let mut next = Vec::with_capacity(configs.joint.len() * c);
            for row in &configs.joint {
                for y in 0..c {
                    next.push(row.iter().zip(item).map(|(j, p)| j * p[y]).collect());
                }
            }
            configs.joint = next;
        } else {
            configs = sample_configurations(prob_samples, &picks, mc_count, &mut rng);
        }
    }
    Ok(picks)
}

fn sample_configurations<R: Rng>(
    prob_samples: &[Vec<Vec<f64>>],
    batch: &[usize],
    mc_count: usize,
    rng: &mut R,
) -> Configurations {
    let t = prob_samples[0].len();
    let joint = (0..mc_count)
        .map(|_| {
            let draw_t = rng.random_range(0..t);
            let labels: Vec<usize> = batch.iter().map(|&i| categorical(&prob_samples[i][draw_t], rng)).collect();
            (0..t)
                .map(|tt| batch.iter().zip(&labels).map(|(&i, &y)| prob_samples[i][tt][y]).product())
                .collect()
        })
        .collect();
    Configurations { joint, exact: false }
}

fn categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}
