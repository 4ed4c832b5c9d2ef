//! Acquisition strategies: which unlabeled photos to send to the oracle next.
//!
//! The VI-based strategies split a budget `K` into `p = round(alpha * K)` picks from the
//! minimum-VI side and `K - p` picks from the maximum-VI side, so `alpha = 1` is pure
//! min-VI and `alpha = 0` pure max-VI. Ties on VI go to the lexicographically lower id.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, LloydParams};
use crate::embedding::{distance_unchecked, squared_distance_unchecked, LabeledPool, Seed, UnlabeledPool};
use crate::error::{ContractError, Result};
use crate::violation::{score_pool, ViScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    KmeansCentroid,
    Coreset,
    ViMin,
    ViMax,
    ViEnsemble,
    ViDiverse,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::KmeansCentroid,
        Strategy::Coreset,
        Strategy::ViMin,
        Strategy::ViMax,
        Strategy::ViEnsemble,
        Strategy::ViDiverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::KmeansCentroid => "kmeans_centroid",
            Strategy::Coreset => "coreset",
            Strategy::ViMin => "vi_min",
            Strategy::ViMax => "vi_max",
            Strategy::ViEnsemble => "vi_ensemble",
            Strategy::ViDiverse => "vi_diverse",
        }
    }

    /// The alpha that actually drives selection, if the strategy uses one.
    pub fn effective_alpha(self, alpha: f64) -> Option<f64> {
        match self {
            Strategy::ViMin => Some(1.0),
            Strategy::ViMax => Some(0.0),
            Strategy::ViEnsemble | Strategy::ViDiverse => Some(alpha),
            _ => None,
        }
    }

    pub fn needs_labeled(self) -> bool {
        matches!(
            self,
            Strategy::ViMin | Strategy::ViMax | Strategy::ViEnsemble | Strategy::ViDiverse
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ContractError::Invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingRequest<'a> {
    pub labeled: &'a LabeledPool,
    pub unlabeled: &'a UnlabeledPool,
    pub budget: usize,
    pub alpha: f64,
    pub seed: Seed,
    pub strategy: Strategy,
    /// Clustering parameters for the k-means based strategies.
    pub lloyd: LloydParams,
}

impl<'a> SamplingRequest<'a> {
    pub fn new(
        labeled: &'a LabeledPool,
        unlabeled: &'a UnlabeledPool,
        strategy: Strategy,
        budget: usize,
        alpha: f64,
        seed: Seed,
    ) -> Self {
        SamplingRequest {
            labeled,
            unlabeled,
            budget,
            alpha,
            seed,
            strategy,
            lloyd: LloydParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(ContractError::Invalid("budget must be positive".into()));
        }
        if self.budget > self.unlabeled.len() {
            return Err(ContractError::BudgetTooLarge {
                requested: self.budget,
                available: self.unlabeled.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ContractError::Invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !self.labeled.is_empty() && self.labeled.dim() != self.unlabeled.photos().dim() {
            return Err(ContractError::DimensionMismatch {
                expected: self.labeled.dim(),
                got: self.unlabeled.photos().dim(),
            });
        }
        Ok(())
    }

    /// Number of picks taken from the minimum-VI side.
    pub fn min_side_count(&self) -> usize {
        min_side_count(self.alpha, self.budget)
    }
}

pub fn min_side_count(alpha: f64, budget: usize) -> usize {
    ((alpha * budget as f64).round() as usize).min(budget)
}

/// Ordered, duplicate-free list of unlabeled photo ids to query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuerySet(Vec<String>);

impl QuerySet {
    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<String> {
        self.0
    }

    fn from_rows(pool: &UnlabeledPool, rows: &[usize]) -> Self {
        QuerySet(rows.iter().map(|&r| pool.photos().id(r).to_string()).collect())
    }
}

/// Runs the strategy named in the request.
pub fn sample(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    match req.strategy {
        Strategy::Random => sample_random(req),
        Strategy::KmeansCentroid => sample_kmeans_centroid(req),
        Strategy::Coreset => sample_coreset(req),
        Strategy::ViMin => sample_vi_ensemble(&SamplingRequest { alpha: 1.0, ..*req }),
        Strategy::ViMax => sample_vi_ensemble(&SamplingRequest { alpha: 0.0, ..*req }),
        Strategy::ViEnsemble => sample_vi_ensemble(req),
        Strategy::ViDiverse => sample_vi_diverse(req),
    }
}

/// Uniform draw without replacement.
pub fn sample_random(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    req.validate()?;
    let mut rng = req.seed.rng();
    let rows = rand::seq::index::sample(&mut rng, req.unlabeled.len(), req.budget).into_vec();
    Ok(QuerySet::from_rows(req.unlabeled, &rows))
}

/// k-means++ with one cluster per budget slot; each cluster contributes the member
/// nearest its centroid, exact ties broken by the seeded RNG.
pub fn sample_kmeans_centroid(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    req.validate()?;
    let photos = req.unlabeled.photos();
    let clustering = kmeans(photos, req.budget, req.seed.derive("kmeans", 0), req.lloyd)?;
    let mut rng = req.seed.derive("tie", 0).rng();

    let dist_to_own: Vec<f64> = (0..photos.len())
        .map(|i| squared_distance_unchecked(photos.row(i), clustering.centroid(clustering.assignment[i])))
        .collect();

    let mut picked = Vec::with_capacity(req.budget);
    for members in clustering.members() {
        let Some(best) = members.iter().map(|&i| dist_to_own[i]).min_by(f64::total_cmp) else {
            continue;
        };
        let tied: Vec<usize> = members.into_iter().filter(|&i| dist_to_own[i] == best).collect();
        picked.push(tied[rng.random_range(0..tied.len())]);
    }

    if picked.len() < req.budget {
        let taken: HashSet<usize> = picked.iter().copied().collect();
        let mut rest: Vec<usize> = (0..photos.len()).filter(|i| !taken.contains(i)).collect();
        rest.sort_by(|&a, &b| dist_to_own[a].total_cmp(&dist_to_own[b]).then(a.cmp(&b)));
        picked.extend(rest.into_iter().take(req.budget - picked.len()));
    }
    Ok(QuerySet::from_rows(req.unlabeled, &picked))
}

/// Greedy k-center (farthest-first) starting from the labeled photos.
pub fn sample_coreset(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    req.validate()?;
    let photos = req.unlabeled.photos();
    let labeled = req.labeled.photos();
    let n = photos.len();

    let mut min_dist = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(req.budget);

    let update = |min_dist: &mut [f64], center: &[f64]| {
        for (j, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(distance_unchecked(photos.row(j), center));
        }
    };

    if labeled.is_empty() {
        let mut mean = vec![0.0; photos.dim()];
        for row in photos.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let from_mean: Vec<f64> = photos.rows().map(|r| distance_unchecked(r, &mean)).collect();
        let first = argmax_lowest(&from_mean).expect("pool is non-empty");
        picked.push(first);
        update(&mut min_dist, photos.row(first));
    } else {
        for row in labeled.rows() {
            update(&mut min_dist, row);
        }
    }

    let mut taken = vec![false; n];
    for &p in &picked {
        taken[p] = true;
    }
    while picked.len() < req.budget {
        let masked: Vec<f64> = (0..n)
            .map(|j| if taken[j] { f64::NEG_INFINITY } else { min_dist[j] })
            .collect();
        let next = argmax_lowest(&masked).expect("budget within pool size");
        taken[next] = true;
        picked.push(next);
        update(&mut min_dist, photos.row(next));
    }
    Ok(QuerySet::from_rows(req.unlabeled, &picked))
}

fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

fn ascending(scores: &ViScores, a: usize, b: usize) -> Ordering {
    scores.vi[a]
        .total_cmp(&scores.vi[b])
        .then_with(|| scores.ids[a].cmp(&scores.ids[b]))
}

fn descending(scores: &ViScores, a: usize, b: usize) -> Ordering {
    scores.vi[b]
        .total_cmp(&scores.vi[a])
        .then_with(|| scores.ids[a].cmp(&scores.ids[b]))
}

/// Pool rows sorted by (VI ascending, id) and by (VI descending, id).
fn vi_orders(scores: &ViScores) -> (Vec<usize>, Vec<usize>) {
    let mut asc: Vec<usize> = (0..scores.len()).collect();
    asc.sort_by(|&a, &b| ascending(scores, a, b));
    let mut desc = asc.clone();
    desc.sort_by(|&a, &b| descending(scores, a, b));
    (asc, desc)
}

fn vi_scores(req: &SamplingRequest<'_>) -> Result<ViScores> {
    score_pool(req.unlabeled, req.labeled)
}

/// `p` lowest-VI items followed by the `K - p` highest-VI items.
pub fn sample_vi_ensemble(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    req.validate()?;
    let scores = vi_scores(req)?;
    let p = req.min_side_count();
    let (asc, desc) = vi_orders(&scores);
    let mut picked: Vec<usize> = asc[..p].to_vec();
    let taken: HashSet<usize> = picked.iter().copied().collect();
    // K <= N_U, so the max side always has enough items left after the min side.
    picked.extend(desc.into_iter().filter(|i| !taken.contains(i)).take(req.budget - p));
    Ok(QuerySet::from_rows(req.unlabeled, &picked))
}

/// Cluster the pool into `K` groups with k-means++, then take one member per cluster:
/// the largest `round(alpha * K)` clusters give their minimum-VI member, the rest their
/// maximum-VI member. Missing picks (empty clusters) come from the global VI extremes.
pub fn sample_vi_diverse(req: &SamplingRequest<'_>) -> Result<QuerySet> {
    req.validate()?;
    let scores = vi_scores(req)?;
    let clustering = kmeans(
        req.unlabeled.photos(),
        req.budget,
        req.seed.derive("kmeans", 0),
        req.lloyd,
    )?;
    let p = req.min_side_count();

    let mut clusters: Vec<(usize, Vec<usize>)> = clustering
        .members()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .collect();
    clusters.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut picked = Vec::with_capacity(req.budget);
    let mut min_taken = 0;
    for (rank, (_, members)) in clusters.iter().enumerate() {
        let pick = if rank < p {
            min_taken += 1;
            members.iter().copied().min_by(|&a, &b| ascending(&scores, a, b))
        } else {
            members.iter().copied().min_by(|&a, &b| descending(&scores, a, b))
        };
        picked.push(pick.expect("non-empty cluster"));
    }
    let max_taken = picked.len() - min_taken;

    let mut taken: HashSet<usize> = picked.iter().copied().collect();
    let (asc, desc) = vi_orders(&scores);
    let need_min = p - min_taken;
    let need_max = (req.budget - p).saturating_sub(max_taken);
    for (order, need) in [(asc, need_min), (desc, need_max)] {
        let extra: Vec<usize> = order.into_iter().filter(|i| !taken.contains(i)).take(need).collect();
        taken.extend(extra.iter().copied());
        picked.extend(extra);
    }
    Ok(QuerySet::from_rows(req.unlabeled, &picked))
}
