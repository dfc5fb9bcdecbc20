use super::{check_batch, check_dims, sq_dist, SelectionError};

/// Greedy k-center (farthest-first traversal) over pool feature vectors.
///
/// Each step picks the pool point farthest from its nearest center, where the
/// labeled points and the points picked so far are centers. Ties go to the
/// smaller position. With no labeled points the first pick is the point
/// farthest from the pool centroid. Returns positions into `pool_features`.
pub fn select_coreset(
    pool_features: &[Vec<f64>],
    labeled_features: &[Vec<f64>],
    batch: usize,
) -> Result<Vec<usize>, SelectionError> {
    check_batch(batch, pool_features.len())?;
    let dim = pool_features[0].len();
    check_dims(pool_features, dim)?;
    check_dims(labeled_features, dim)?;

    let n = pool_features.len();
    let mut nearest: Vec<f64> = if labeled_features.is_empty() {
        let mut centroid = vec![0.0; dim];
        for f in pool_features {
            centroid.iter_mut().zip(f).for_each(|(c, v)| *c += v);
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);
        // Distances to the centroid drive only the first pick.
        pool_features.iter().map(|f| sq_dist(f, &centroid)).collect()
    } else {
        pool_features
            .iter()
            .map(|f| labeled_features.iter().map(|l| sq_dist(f, l)).fold(f64::INFINITY, f64::min))
            .collect()
    };
    let centroid_mode = labeled_features.is_empty();

    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(batch);
    for step in 0..batch {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("batch <= pool size");
        taken[pick] = true;
        picks.push(pick);
        if step == 0 && centroid_mode {
            nearest = pool_features.iter().map(|f| sq_dist(f, &pool_features[pick])).collect();
        } else {
            for (i, f) in pool_features.iter().enumerate() {
                nearest[i] = nearest[i].min(sq_dist(f, &pool_features[pick]));
            }
        }
    }
    Ok(picks)
}

/// Largest distance from any pool point to its nearest center among
/// `centers` (positions into the pool) and the labeled points.
pub fn covering_radius(pool_features: &[Vec<f64>], labeled_features: &[Vec<f64>], centers: &[usize]) -> f64 {
    pool_features
        .iter()
        .map(|f| {
            centers
                .iter()
                .map(|&c| &pool_features[c])
                .chain(labeled_features.iter())
                .map(|c| sq_dist(f, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}
