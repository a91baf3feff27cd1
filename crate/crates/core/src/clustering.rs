//! Alternating (Voronoi-iteration) k-medoids.
//!
//! Initial medoids come from greedy farthest-point selection starting at a
//! seeded random point. Each iteration re-centers every cluster on the member
//! with the smallest summed distance to the other members, then reassigns
//! points to their nearest medoid. Neither step can raise the total cost.
//!
//! The alternating scheme stalls in poor local optima on small inputs, so
//! several runs are made and the cheapest kept: farthest-point selection from
//! the seeded start and from further points in index order, plus seeded
//! uniform draws. The run count shrinks as the point count grows.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metric::DistanceMetric;

#[derive(Clone, Debug, PartialEq)]
pub struct MedoidResult {
    /// Distinct row indices into the point matrix.
    pub medoid_indices: Vec<usize>,
    /// Cluster position (into `medoid_indices`) of each point.
    pub assignments: Vec<usize>,
    pub total_cost: f64,
    /// Cost after the initial assignment and after each iteration.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmedoids(
    points: &Matrix,
    k: usize,
    metric: &dyn DistanceMetric,
    seed: u64,
    max_iter: usize,
) -> Result<MedoidResult> {
    let weights = vec![1.0; points.rows()];
    kmedoids_weighted(points, &weights, k, metric, seed, max_iter)
}

/// k-medoids where point `i` counts `weights[i]` times in every cost sum.
///
/// Clustering distinct points with their multiplicities as weights gives the
/// same costs as clustering the expanded multiset.
pub fn kmedoids_weighted(
    points: &Matrix,
    weights: &[f64],
    k: usize,
    metric: &dyn DistanceMetric,
    seed: u64,
    max_iter: usize,
) -> Result<MedoidResult> {
    let m = points.rows();
    if k == 0 {
        return Err(Error::Invalid("k-medoids needs k >= 1".into()));
    }
    if k > m {
        return Err(Error::Invalid(format!(
            "k-medoids needs k <= number of points ({k} > {m})"
        )));
    }
    if max_iter == 0 {
        return Err(Error::Invalid("k-medoids needs max_iter >= 1".into()));
    }
    if weights.len() != m {
        return Err(Error::Shape(format!("{} weights for {m} points", weights.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..m);
    let restarts = restarts_for(m);
    let mut inits = Vec::with_capacity(2 * restarts);
    for start in std::iter::once(first).chain((0..m).filter(|&i| i != first)).take(restarts) {
        inits.push(farthest_point_init(points, k, metric, start)?);
    }
    for _ in 0..restarts {
        inits.push(index::sample(&mut rng, m, k).into_vec());
    }
    let mut best: Option<MedoidResult> = None;
    for init in inits {
        let run = alternate(points, weights, init, metric, max_iter)?;
        if best.as_ref().is_none_or(|b| run.total_cost < b.total_cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

const MAX_RESTARTS: usize = 16;

/// Runs per initialization family; re-centering is quadratic in cluster size.
fn restarts_for(m: usize) -> usize {
    (4_000_000 / m.saturating_mul(m).max(1)).clamp(1, MAX_RESTARTS)
}

fn alternate(
    points: &Matrix,
    weights: &[f64],
    mut medoids: Vec<usize>,
    metric: &dyn DistanceMetric,
    max_iter: usize,
) -> Result<MedoidResult> {
    let (mut assignments, mut cost) = assign(points, weights, &medoids, metric)?;
    let mut cost_history = vec![cost];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        if !recenter(points, weights, &assignments, &mut medoids, metric)? {
            break;
        }
        let (a, c) = assign(points, weights, &medoids, metric)?;
        assignments = a;
        cost = c;
        cost_history.push(cost);
    }

    Ok(MedoidResult {
        medoid_indices: medoids,
        assignments,
        total_cost: cost,
        cost_history,
        iterations,
    })
}

fn farthest_point_init(
    points: &Matrix,
    k: usize,
    metric: &dyn DistanceMetric,
    first: usize,
) -> Result<Vec<usize>> {
    let m = points.rows();
    let mut chosen = vec![first];
    let mut is_medoid = vec![false; m];
    is_medoid[first] = true;
    let mut nearest: Vec<f64> = (0..m)
        .map(|i| metric.distance(points.row(i), points.row(first)))
        .collect::<Result<_>>()?;

    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..m {
            if is_medoid[i] {
                continue;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= m leaves a free point");
        chosen.push(next);
        is_medoid[next] = true;
        for (i, n) in nearest.iter_mut().enumerate() {
            let d = metric.distance(points.row(i), points.row(next))?;
            if d < *n {
                *n = d;
            }
        }
    }
    Ok(chosen)
}

/// Nearest medoid per point (lowest medoid position on ties) and weighted cost.
fn assign(
    points: &Matrix,
    weights: &[f64],
    medoids: &[usize],
    metric: &dyn DistanceMetric,
) -> Result<(Vec<usize>, f64)> {
    let nearest: Vec<(usize, f64)> = (0..points.rows())
        .into_par_iter()
        .map(|i| nearest_medoid(points, i, medoids, metric))
        .collect::<Result<_>>()?;
    let cost = nearest.iter().zip(weights).map(|((_, d), w)| w * d).sum();
    Ok((nearest.into_iter().map(|(c, _)| c).collect(), cost))
}

fn nearest_medoid(
    points: &Matrix,
    i: usize,
    medoids: &[usize],
    metric: &dyn DistanceMetric,
) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (c, &mi) in medoids.iter().enumerate() {
        let d = metric.distance(points.row(i), points.row(mi))?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best)
}

/// Moves each medoid to its cluster's cost-minimizing member. Only strictly
/// better members replace the incumbent. Returns whether anything moved.
fn recenter(
    points: &Matrix,
    weights: &[f64],
    assignments: &[usize],
    medoids: &mut [usize],
    metric: &dyn DistanceMetric,
) -> Result<bool> {
    let mut members = vec![Vec::new(); medoids.len()];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    let updated: Vec<usize> = members
        .par_iter()
        .zip(medoids.par_iter())
        .map(|(cluster, &current)| {
            if cluster.is_empty() {
                return Ok(current);
            }
            let spread = |cand: usize| -> Result<f64> {
                let mut s = 0.0;
                for &j in cluster {
                    s += weights[j] * metric.distance(points.row(cand), points.row(j))?;
                }
                Ok(s)
            };
            let mut best = (current, spread(current)?);
            for &cand in cluster {
                if cand == current {
                    continue;
                }
                let s = spread(cand)?;
                if s < best.1 {
                    best = (cand, s);
                }
            }
            Ok(best.0)
        })
        .collect::<Result<_>>()?;
    let moved = updated.iter().zip(medoids.iter()).any(|(a, b)| a != b);
    medoids.copy_from_slice(&updated);
    Ok(moved)
}

/// Σ over points of the distance to the nearest listed medoid.
pub fn total_cost(points: &Matrix, medoid_indices: &[usize], metric: &dyn DistanceMetric) -> Result<f64> {
    if medoid_indices.iter().any(|&i| i >= points.rows()) {
        return Err(Error::Invalid("medoid index out of range".into()));
    }
    let mut cost = 0.0;
    for i in 0..points.rows() {
        cost += nearest_medoid(points, i, medoid_indices, metric)?.1;
    }
    Ok(cost)
}

/// Sorted indices of a seeded uniform subsample of size `cap`, or all of `0..n`.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked
}
