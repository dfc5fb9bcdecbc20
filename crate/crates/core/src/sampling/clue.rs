//! CLUE-style selection: uncertainty-weighted k-means with `k = B`, then the
//! pool point nearest each centroid.

use rand::Rng;

use super::{check_batch, check_dims, sq_dist, SelectionError};
use crate::seed::Seed;

pub const CLUE_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ClueSelection {
    /// Positions into the feature array, one per centroid.
    pub picks: Vec<usize>,
    /// All uncertainties were zero and plain k-means was used instead.
    pub unweighted_fallback: bool,
}

pub fn select_clue(
    features: &[Vec<f64>],
    uncertainties: &[f64],
    batch: usize,
    seed: Seed,
) -> Result<ClueSelection, SelectionError> {
    check_batch(batch, features.len())?;
    if features.len() != uncertainties.len() {
        return Err(SelectionError::Inconsistent(format!(
            "{} feature vectors but {} uncertainties",
            features.len(),
            uncertainties.len()
        )));
    }
    let dim = features[0].len();
    check_dims(features, dim)?;
    if let Some(pos) = uncertainties.iter().position(|u| !(u.is_finite() && *u >= 0.0)) {
        return Err(SelectionError::NonFiniteScore(pos));
    }
    let unweighted_fallback = uncertainties.iter().all(|&u| u == 0.0);
    let weights: Vec<f64> = if unweighted_fallback { vec![1.0; features.len()] } else { uncertainties.to_vec() };

    let mut rng = seed.rng();
    let mut centers = seed_centers(features, &weights, batch, &mut rng);
    let mut assignment = vec![usize::MAX; features.len()];
    for _ in 0..CLUE_MAX_ITERATIONS {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let a = nearest(f, &centers);
            if a != assignment[i] {
                assignment[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; batch];
        let mut mass = vec![0.0; batch];
        for (i, f) in features.iter().enumerate() {
            let k = assignment[i];
            mass[k] += weights[i];
            sums[k].iter_mut().zip(f).for_each(|(s, v)| *s += weights[i] * v);
        }
        for k in 0..batch {
            // A cluster without weight keeps its center.
            if mass[k] > 0.0 {
                centers[k] = sums[k].iter().map(|s| s / mass[k]).collect();
            }
        }
    }

    let mut taken = vec![false; features.len()];
    let mut picks = Vec::with_capacity(batch);
    for c in &centers {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = sq_dist(f, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("batch <= pool size");
        taken[i] = true;
        picks.push(i);
    }
    Ok(ClueSelection { picks, unweighted_fallback })
}

fn nearest(f: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(f, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Weighted k-means++ seeding: the first center is drawn proportionally to
/// weight, later ones proportionally to weight times squared distance to the
/// nearest chosen center. When every remaining mass is zero the lowest
/// unchosen position is used.
fn seed_centers<R: Rng>(features: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let mut d2 = vec![f64::INFINITY; n];
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for step in 0..k {
        let mass: Vec<f64> = (0..n)
            .map(|i| if chosen[i] { 0.0 } else if step == 0 { weights[i] } else { weights[i] * d2[i] })
            .collect();
        let total: f64 = mass.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, m) in mass.iter().enumerate() {
                acc += m;
                if *m > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| mass.iter().rposition(|&m| m > 0.0).unwrap())
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        for (i, f) in features.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(f, &features[pick]));
        }
        centers.push(features[pick].clone());
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut f = Vec::new();
        for i in 0..10 {
            let o = i as f64 * 0.01;
            f.push(vec![o, -o]);
            f.push(vec![100.0 + o, 100.0 - o]);
        }
        f
    }

    /// Weighted k-means objective of a 2-partition, for brute-force search.
    fn objective(features: &[Vec<f64>], weights: &[f64], mask: u32) -> f64 {
        let mut total = 0.0;
        for side in [0u32, 1] {
            let members: Vec<usize> = (0..features.len()).filter(|&i| (mask >> i) & 1 == side).collect();
            let mass: f64 = members.iter().map(|&i| weights[i]).sum();
            if mass == 0.0 {
                continue;
            }
            let dim = features[0].len();
            let c: Vec<f64> =
                (0..dim).map(|d| members.iter().map(|&i| weights[i] * features[i][d]).sum::<f64>() / mass).collect();
            total += members.iter().map(|&i| weights[i] * sq_dist(&features[i], &c)).sum::<f64>();
        }
        total
    }

    #[test]
    fn whole_pool_when_batch_equals_pool() {
        let f = blobs();
        let u = vec![1.0; f.len()];
        let mut got = select_clue(&f, &u, f.len(), Seed(3)).unwrap().picks;
        got.sort_unstable();
        assert_eq!(got, (0..f.len()).collect::<Vec<_>>());
    }

    #[test]
    fn weight_concentration_selects_the_weighted_point() {
        let f = blobs();
        let mut u = vec![0.0; f.len()];
        u[7] = 1.0;
        let sel = select_clue(&f, &u, 1, Seed(9)).unwrap();
        assert_eq!(sel.picks, vec![7]);
        assert!(!sel.unweighted_fallback);
    }

    #[test]
    fn separated_blobs_get_one_pick_each() {
        let f: Vec<Vec<f64>> = blobs().into_iter().take(12).collect();
        let u = vec![1.0; f.len()];
        // The optimal weighted 2-partition (brute force over all masks) is the
        // blob split.
        let best = (1u32..(1 << f.len()) - 1)
            .min_by(|&a, &b| objective(&f, &u, a).total_cmp(&objective(&f, &u, b)))
            .unwrap();
        let blob_of = |i: usize| usize::from(f[i][0] > 50.0);
        for i in 0..f.len() {
            assert_eq!((best >> i) & 1 == (best & 1), blob_of(i) == blob_of(0));
        }
        for s in 0..20 {
            let picks = select_clue(&f, &u, 2, Seed(s)).unwrap().picks;
            assert_ne!(blob_of(picks[0]), blob_of(picks[1]));
        }
    }

    #[test]
    fn zero_uncertainty_falls_back_to_unweighted() {
        let f = blobs();
        let sel = select_clue(&f, &vec![0.0; f.len()], 2, Seed(1)).unwrap();
        assert!(sel.unweighted_fallback);
        assert_eq!(sel.picks.len(), 2);
    }

    #[test]
    fn input_validation() {
        let f = blobs();
        assert!(matches!(select_clue(&f, &[1.0], 1, Seed(0)), Err(SelectionError::Inconsistent(_))));
        assert!(select_clue(&f, &vec![1.0; f.len()], f.len() + 1, Seed(0)).is_err());
        let mut u = vec![1.0; f.len()];
        u[2] = -1.0;
        assert_eq!(select_clue(&f, &u, 1, Seed(0)), Err(SelectionError::NonFiniteScore(2)));
    }

    #[test]
    fn duplicate_points_still_give_distinct_picks() {
        let f = vec![vec![1.0, 1.0]; 6];
        let sel = select_clue(&f, &[1.0; 6], 4, Seed(2)).unwrap();
        let mut p = sel.picks.clone();
        p.sort_unstable();
        p.dedup();
        assert_eq!(p.len(), 4);
    }
}
