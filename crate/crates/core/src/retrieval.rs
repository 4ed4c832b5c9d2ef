//! Sketch → photo retrieval and acc@q.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::embedding::{check_dims, distance_unchecked, EmbeddingMatrix, Pairing};
use crate::error::{ContractError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Per query sketch: its id and the top-`max q` gallery ids, nearest first.
    pub ranked: Vec<(String, Vec<String>)>,
    pub acc_at: BTreeMap<usize, f64>,
}

impl RetrievalResult {
    /// `q,acc` lines with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,acc\n");
        for (q, acc) in &self.acc_at {
            out.push_str(&format!("{q},{acc}\n"));
        }
        out
    }
}

fn check_q(q: usize, gallery: &EmbeddingMatrix) -> Result<()> {
    if q == 0 || q > gallery.len() {
        return Err(ContractError::Invalid(format!(
            "q = {q} outside 1..={} for this gallery",
            gallery.len()
        )));
    }
    Ok(())
}

fn ranking(sketch: &[f64], gallery: &EmbeddingMatrix) -> Vec<(f64, usize)> {
    let mut scored: Vec<(f64, usize)> = gallery
        .rows()
        .enumerate()
        .map(|(j, row)| (distance_unchecked(sketch, row), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| gallery.id(a.1).cmp(gallery.id(b.1))));
    scored
}

/// The `q` gallery ids nearest to `sketch`, ascending by distance, ties to the lower id.
pub fn retrieve(sketch: &[f64], gallery: &EmbeddingMatrix, q: usize) -> Result<Vec<String>> {
    check_q(q, gallery)?;
    check_dims(gallery.dim(), sketch.len())?;
    Ok(ranking(sketch, gallery)
        .into_iter()
        .take(q)
        .map(|(_, j)| gallery.id(j).to_string())
        .collect())
}

/// Zero-based position of the true photo in the ranking, without a full sort.
fn true_rank(sketch: &[f64], gallery: &EmbeddingMatrix, truth_row: usize) -> usize {
    let target = distance_unchecked(sketch, gallery.row(truth_row));
    let target_id = gallery.id(truth_row);
    gallery
        .rows()
        .enumerate()
        .filter(|&(j, row)| {
            let d = distance_unchecked(sketch, row);
            d < target || (d == target && gallery.id(j) < target_id)
        })
        .count()
}

fn truth_rows(sketches: &EmbeddingMatrix, gallery: &EmbeddingMatrix, truth: &Pairing) -> Result<Vec<usize>> {
    let index = gallery.index();
    sketches
        .ids()
        .iter()
        .map(|s| {
            let photo = truth
                .photo_for(s)
                .ok_or_else(|| ContractError::Invalid(format!("sketch `{s}` has no true match")))?;
            index
                .get(photo)
                .copied()
                .ok_or_else(|| ContractError::Invalid(format!("true match `{photo}` of `{s}` not in gallery")))
        })
        .collect()
}

/// Fraction of sketches whose true photo is among the top `q` retrieved.
pub fn acc_at_q(sketches: &EmbeddingMatrix, gallery: &EmbeddingMatrix, truth: &Pairing, q: usize) -> Result<f64> {
    Ok(evaluate_ranks(sketches, gallery, truth, &[q])?[&q])
}

fn evaluate_ranks(
    sketches: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    truth: &Pairing,
    qs: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    for &q in qs {
        check_q(q, gallery)?;
    }
    if sketches.is_empty() {
        return Err(ContractError::Invalid("no query sketches".into()));
    }
    check_dims(gallery.dim(), sketches.dim())?;
    let rows = truth_rows(sketches, gallery, truth)?;
    let ranks: Vec<usize> = (0..sketches.len())
        .into_par_iter()
        .map(|i| true_rank(sketches.row(i), gallery, rows[i]))
        .collect();
    Ok(qs
        .iter()
        .map(|&q| {
            let hits = ranks.iter().filter(|&&r| r < q).count();
            (q, hits as f64 / sketches.len() as f64)
        })
        .collect())
}

/// acc@q for every requested `q` plus the top-`max q` list of each sketch.
pub fn evaluate(
    sketches: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    truth: &Pairing,
    qs: &[usize],
) -> Result<RetrievalResult> {
    let acc_at = evaluate_ranks(sketches, gallery, truth, qs)?;
    let top = qs.iter().copied().max().unwrap_or(1);
    let ranked = (0..sketches.len())
        .map(|i| Ok((sketches.id(i).to_string(), retrieve(sketches.row(i), gallery, top)?)))
        .collect::<Result<_>>()?;
    Ok(RetrievalResult { ranked, acc_at })
}
