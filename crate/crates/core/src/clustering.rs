//! k-means++ seeding and Lloyd refinement.
//!
//! Every pass over the points walks them in a canonical order (lexicographic on
//! coordinates), so permuting the input rows permutes the assignment identically
//! and leaves the centroids bit-identical.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;

use crate::embedding::{squared_distance_unchecked, EmbeddingMatrix, Seed};
use crate::error::{ContractError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LloydParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for LloydParams {
    fn default() -> Self {
        LloydParams {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, first entry from the initial centroids.
    pub inertia_history: Vec<f64>,
    /// Number of centroid-update passes performed.
    pub iterations: usize,
}

impl Clustering {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Member row indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            members[a].push(i);
        }
        members
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Row indices sorted lexicographically by coordinates, ties by index.
pub(crate) fn canonical_order(points: &EmbeddingMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(points.row(a), points.row(b)).then(a.cmp(&b)));
    order
}

/// k-means++ seeding: returns the row indices of `k` initial centroids.
pub fn kmeanspp_seed(points: &EmbeddingMatrix, k: usize, seed: Seed) -> Result<Vec<usize>> {
    check_k(points, k)?;
    let mut rng = seed.rng();
    let order = canonical_order(points);
    let first = order[rng.random_range(0..order.len())];
    Ok(seed_rest(points, k, first, &order, &mut rng))
}

/// k-means++ seeding with the first centroid fixed to row `first`.
pub fn kmeanspp_seed_from<R: Rng>(points: &EmbeddingMatrix, k: usize, first: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_k(points, k)?;
    if first >= points.len() {
        return Err(ContractError::IndexOutOfRange {
            index: first,
            len: points.len(),
        });
    }
    let order = canonical_order(points);
    Ok(seed_rest(points, k, first, &order, rng))
}

fn check_k(points: &EmbeddingMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(ContractError::Invalid("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(ContractError::BudgetTooLarge {
            requested: k,
            available: points.len(),
        });
    }
    Ok(())
}

fn seed_rest<R: Rng>(points: &EmbeddingMatrix, k: usize, first: usize, order: &[usize], rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance_unchecked(points.row(i), points.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = order.iter().map(|&i| nearest[i]).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut pick = None;
            for &i in order {
                if nearest[i] > 0.0 {
                    cumulative += nearest[i];
                    pick = Some(i);
                    if cumulative > target {
                        break;
                    }
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // Every remaining point coincides with a chosen centroid.
            let free: Vec<usize> = order.iter().copied().filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance_unchecked(points.row(i), points.row(next)));
        }
    }
    chosen
}

fn nearest_centroid(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance_unchecked(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &EmbeddingMatrix, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let dim = points.dim();
    (0..points.len())
        .into_par_iter()
        .map(|i| nearest_centroid(points.row(i), centroids, dim))
        .unzip()
}

/// Moves each empty cluster's centroid onto the point farthest from its own centroid,
/// taking points only from clusters with more than one member.
fn repair_empty(
    points: &EmbeddingMatrix,
    order: &[usize],
    centroids: &mut [f64],
    assignment: &mut [usize],
    dists: &mut [f64],
    k: usize,
) {
    let dim = points.dim();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for &i in order {
            if sizes[assignment[i]] > 1 && donor.is_none_or(|d| dists[i] > dists[d]) {
                donor = Some(i);
            }
        }
        let Some(i) = donor else { break };
        sizes[assignment[i]] -= 1;
        sizes[c] = 1;
        assignment[i] = c;
        dists[i] = 0.0;
        centroids[c * dim..(c + 1) * dim].copy_from_slice(points.row(i));
    }
}

fn inertia(order: &[usize], dists: &[f64]) -> f64 {
    order.iter().map(|&i| dists[i]).sum()
}

/// Lloyd iterations from the given initial centroids (`k × dim`, row-major).
pub fn lloyd(points: &EmbeddingMatrix, init_centroids: &[f64], params: LloydParams) -> Result<Clustering> {
    let dim = points.dim();
    if init_centroids.is_empty() || !init_centroids.len().is_multiple_of(dim) {
        return Err(ContractError::DimensionMismatch {
            expected: dim,
            got: init_centroids.len(),
        });
    }
    let k = init_centroids.len() / dim;
    let order = canonical_order(points);
    let mut centroids = init_centroids.to_vec();

    let (mut assignment, mut dists) = assign(points, &centroids);
    repair_empty(points, &order, &mut centroids, &mut assignment, &mut dists, k);
    let mut history = vec![inertia(&order, &dists)];
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for &i in &order {
            let c = assignment[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c * dim..(c + 1) * dim]
                .iter()
                .map(|s| s / counts[c] as f64)
                .collect();
            let old = &mut centroids[c * dim..(c + 1) * dim];
            shift = shift.max(squared_distance_unchecked(old, &updated).sqrt());
            old.copy_from_slice(&updated);
        }

        let (a, d) = assign(points, &centroids);
        assignment = a;
        dists = d;
        repair_empty(points, &order, &mut centroids, &mut assignment, &mut dists, k);
        let current = inertia(&order, &dists);
        let previous = *history.last().expect("non-empty history");
        debug_assert!(
            current <= previous + 1e-9 * previous.max(1.0),
            "inertia increased from {previous} to {current}"
        );
        history.push(current);
        if shift < params.tol {
            break;
        }
    }

    // A repair may leave other points nearer to the moved centroid; settle them.
    let (assignment, dists) = assign(points, &centroids);
    let total = inertia(&order, &dists);
    Ok(Clustering {
        k,
        dim,
        centroids,
        assignment,
        inertia: total,
        inertia_history: history,
        iterations,
    })
}

/// k-means++ seeding followed by Lloyd refinement.
pub fn kmeans(points: &EmbeddingMatrix, k: usize, seed: Seed, params: LloydParams) -> Result<Clustering> {
    let init = kmeanspp_seed(points, k, seed)?;
    let mut centroids = Vec::with_capacity(k * points.dim());
    for &i in &init {
        centroids.extend_from_slice(points.row(i));
    }
    lloyd(points, &centroids, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Modality;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("x{i}")).collect();
        EmbeddingMatrix::from_rows(ids, rows, Modality::Photo, false).unwrap()
    }

    fn line(xs: &[f64]) -> EmbeddingMatrix {
        matrix(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>())
    }

    fn blobs() -> EmbeddingMatrix {
        matrix(&[vec![0.0, 0.0], vec![10.0, 10.0], vec![1.0, 0.0], vec![10.0, 11.0]])
    }

    #[test]
    fn k_equals_n_picks_every_point() {
        let pts = line(&[3.0, -1.0, 7.0, 2.5]);
        let mut picked = kmeanspp_seed(&pts, 4, Seed(11)).unwrap();
        picked.sort();
        assert_eq!(picked, vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        assert!(matches!(
            kmeanspp_seed(&line(&[0.0, 1.0]), 3, Seed(0)),
            Err(ContractError::BudgetTooLarge {
                requested: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn d2_weighting_on_a_line() {
        // Weights after forcing 0: d²(1) = 1, d²(4) = 16.
        let pts = line(&[0.0, 1.0, 4.0]);
        let draws = 20_000;
        let ones = (0..draws)
            .filter(|&s| {
                let mut rng = Seed(s).rng();
                kmeanspp_seed_from(&pts, 2, 0, &mut rng).unwrap()[1] == 1
            })
            .count();
        let freq = ones as f64 / draws as f64;
        assert!((freq - 1.0 / 17.0).abs() < 0.01, "{freq}");
    }

    #[test]
    fn identical_points_fall_back_to_uniform() {
        let pts = line(&[2.0; 5]);
        let picked = kmeanspp_seed(&pts, 3, Seed(4)).unwrap();
        let mut dedup = picked.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 3);
    }

    #[test]
    fn seeding_is_deterministic() {
        let pts = line(&[0.0, 1.0, 4.0, 9.0, 16.0, 25.0]);
        assert_eq!(
            kmeanspp_seed(&pts, 3, Seed(5)).unwrap(),
            kmeanspp_seed(&pts, 3, Seed(5)).unwrap()
        );
    }

    #[test]
    fn two_blobs() {
        let pts = blobs();
        let c = lloyd(&pts, &[0.0, 0.0, 10.0, 10.0], LloydParams::default()).unwrap();
        assert_eq!(c.assignment, vec![0, 1, 0, 1]);
        assert_eq!(c.centroid(0), &[0.5, 0.0]);
        assert_eq!(c.centroid(1), &[10.0, 10.5]);
        assert_eq!(c.inertia, 1.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = line(&[1.0, 2.0, 6.0]);
        let c = lloyd(&pts, &[1.0], LloydParams::default()).unwrap();
        assert_eq!(c.centroid(0), &[3.0]);
        assert!(c.iterations <= 2);
    }

    #[test]
    fn converged_input_is_a_fixed_point() {
        let pts = blobs();
        let init = [0.5, 0.0, 10.0, 10.5];
        let c = lloyd(&pts, &init, LloydParams::default()).unwrap();
        assert_eq!(c.iterations, 1);
        assert_eq!(c.centroids, init.to_vec());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Both initial centroids far from the data: one would start empty.
        let pts = line(&[0.0, 1.0, 10.0]);
        let c = lloyd(&pts, &[0.5, 100.0], LloydParams::default()).unwrap();
        assert!(c.sizes().iter().all(|&s| s > 0), "{:?}", c.sizes());
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_ne!(c.assignment[0], c.assignment[2]);
    }

    #[test]
    fn centroid_dim_mismatch() {
        assert!(lloyd(&blobs(), &[1.0, 2.0, 3.0], LloydParams::default()).is_err());
    }

    fn random_points(seed: u64, n: usize, d: usize) -> EmbeddingMatrix {
        let mut rng = Seed(seed).rng();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        matrix(&rows)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn inertia_never_increases(seed in any::<u64>(), n in 2usize..40, k in 1usize..6) {
            let pts = random_points(seed, n, 3);
            let k = k.min(n);
            let c = kmeans(&pts, k, Seed(seed), LloydParams::default()).unwrap();
            for w in c.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
            }
            for (i, &a) in c.assignment.iter().enumerate() {
                let (best, _) = nearest_centroid(pts.row(i), &c.centroids, 3);
                prop_assert_eq!(a, best);
            }
        }

        #[test]
        fn permuting_rows_permutes_assignment(seed in any::<u64>(), n in 2usize..30, k in 1usize..5) {
            let pts = random_points(seed, n, 2);
            let k = k.min(n);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut Seed(seed ^ 1).rng());
            let shuffled = pts.select(&perm).unwrap();
            let a = kmeans(&pts, k, Seed(seed), LloydParams::default()).unwrap();
            let b = kmeans(&shuffled, k, Seed(seed), LloydParams::default()).unwrap();
            prop_assert_eq!(&a.centroids, &b.centroids);
            for (j, &orig) in perm.iter().enumerate() {
                prop_assert_eq!(b.assignment[j], a.assignment[orig]);
            }
        }
    }
}
