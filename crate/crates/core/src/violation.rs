//! Violation index of unlabeled photos against a labeled photo/sketch pool.
//!
//! For a candidate photo embedding `x` and labeled pairs `(I_i, S_i)`:
//!
//! ```text
//! VI(x) = (1 / N_L) * Σ_i ‖I_i − S_i‖ / (‖x − S_i‖ + ε)
//! ```
//!
//! A high index means `x` sits closer to existing sketches than their own photos do.

use rayon::prelude::*;

use crate::embedding::{check_dims, distance_unchecked, squared_distance_unchecked, LabeledPool, UnlabeledPool};
use crate::error::{ContractError, Result};

/// Added to every denominator so a photo coinciding with a sketch scores finite.
pub const VI_EPS: f64 = 1e-12;

/// A single violation index together with a flag set when some denominator was
/// below [`VI_EPS`], i.e. the candidate coincides with a labeled sketch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViValue {
    pub vi: f64,
    pub degenerate: bool,
}

/// Violation indices for an unlabeled pool, in pool row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViScores {
    pub ids: Vec<String>,
    pub vi: Vec<f64>,
    pub n_labeled_used: usize,
    /// Ids whose index hit a degenerate denominator.
    pub degenerate: Vec<String>,
}

impl ViScores {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.ids.iter().map(String::as_str).zip(self.vi.iter().copied())
    }

    /// `id,vi` lines with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,vi\n");
        for (id, vi) in self.iter() {
            out.push_str(&format!("{id},{vi}\n"));
        }
        out
    }
}

/// Violation index of one photo embedding.
pub fn violation_index(photo: &[f64], labeled: &LabeledPool) -> Result<f64> {
    violation_index_flagged(photo, labeled).map(|v| v.vi)
}

/// Like [`violation_index`] but also reports degenerate denominators.
pub fn violation_index_flagged(photo: &[f64], labeled: &LabeledPool) -> Result<ViValue> {
    if labeled.is_empty() {
        return Err(ContractError::EmptyLabeledPool);
    }
    check_dims(labeled.dim(), photo.len())?;
    Ok(vi_unchecked(photo, labeled))
}

fn vi_unchecked(photo: &[f64], labeled: &LabeledPool) -> ViValue {
    let photos = labeled.photos();
    let sketches = labeled.sketches();
    let mut sum = 0.0;
    let mut degenerate = false;
    for i in 0..labeled.len() {
        let sketch = sketches.row(i);
        let paired = distance_unchecked(photos.row(i), sketch);
        let candidate = distance_unchecked(photo, sketch);
        degenerate |= candidate < VI_EPS;
        sum += paired / (candidate + VI_EPS);
    }
    ViValue {
        vi: sum / labeled.len() as f64,
        degenerate,
    }
}

/// Scores every photo of `unlabeled` against `labeled`.
///
/// Items are scored in parallel; each score is computed by the same sequential loop
/// as [`violation_index`], so results do not depend on thread scheduling.
pub fn score_pool(unlabeled: &UnlabeledPool, labeled: &LabeledPool) -> Result<ViScores> {
    if labeled.is_empty() {
        return Err(ContractError::EmptyLabeledPool);
    }
    let photos = unlabeled.photos();
    if !photos.is_empty() {
        check_dims(labeled.dim(), photos.dim())?;
    }
    let values: Vec<ViValue> = (0..photos.len())
        .into_par_iter()
        .map(|j| vi_unchecked(photos.row(j), labeled))
        .collect();
    let degenerate = values
        .iter()
        .zip(photos.ids())
        .filter(|(v, _)| v.degenerate)
        .map(|(_, id)| id.clone())
        .collect();
    Ok(ViScores {
        ids: photos.ids().to_vec(),
        vi: values.into_iter().map(|v| v.vi).collect(),
        n_labeled_used: labeled.len(),
        degenerate,
    })
}

/// True when the candidate photo is at least as close to sketch `pair` as that
/// sketch's own photo is (squared distances).
pub fn violates(photo: &[f64], pair: usize, labeled: &LabeledPool) -> Result<bool> {
    if pair >= labeled.len() {
        return Err(ContractError::IndexOutOfRange {
            index: pair,
            len: labeled.len(),
        });
    }
    check_dims(labeled.dim(), photo.len())?;
    let sketch = labeled.sketches().row(pair);
    let candidate = squared_distance_unchecked(photo, sketch);
    let paired = squared_distance_unchecked(labeled.photos().row(pair), sketch);
    Ok(candidate <= paired)
}
