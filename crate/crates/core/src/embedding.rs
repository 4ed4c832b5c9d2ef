//! Vector types, distances and the seeded RNG contract shared by every module.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ContractError, Result};

/// Tolerance on row norms for matrices flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Guard added under the square root when normalizing, so zero rows never divide by zero.
pub const NORM_EPS: f64 = 1e-12;

/// Root seed of every randomized operation.
///
/// All randomness flows from a `Seed` through [`Seed::rng`] or a derived child seed,
/// so identical seeds and inputs give bit-identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Child seed for an independent stream, keyed by a label and an index.
    pub fn derive(self, label: &str, index: u64) -> Seed {
        let mut h = splitmix64(self.0 ^ 0x0005_eed0_fa11_5eed);
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        Seed(splitmix64(h ^ index))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Photo,
    Sketch,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Photo => f.write_str("photo"),
            Modality::Sketch => f.write_str("sketch"),
        }
    }
}

/// Euclidean distance between two equally sized vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(squared_distance_unchecked(a, b).sqrt())
}

/// Squared Euclidean distance between two equally sized vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(squared_distance_unchecked(a, b))
}

pub(crate) fn squared_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    squared_distance_unchecked(a, b).sqrt()
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ContractError::DimensionMismatch { expected, got })
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `N` rows of `d`-dimensional vectors from a single modality, each with a unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    modality: Modality,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major `data`, validating every invariant.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>, modality: Modality, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(ContractError::Invalid("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(ContractError::RowMismatch {
                what: "data",
                expected: ids.len(),
                got: data.len() / dim,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(ContractError::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(ContractError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let m = EmbeddingMatrix {
            ids,
            dim,
            data,
            modality,
            normalized,
        };
        if normalized {
            m.check_normalized()?;
        }
        Ok(m)
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>], modality: Modality, normalized: bool) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != ids.len() {
            return Err(ContractError::RowMismatch {
                what: "rows",
                expected: ids.len(),
                got: rows.len(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dims(dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(ids, dim, data, modality, normalized)
    }

    pub fn empty(dim: usize, modality: Modality) -> Result<Self> {
        Self::new(Vec::new(), dim, Vec::new(), modality, false)
    }

    fn check_normalized(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(ContractError::NotNormalized { row: i, norm });
            }
        }
        Ok(())
    }

    /// Returns a copy with every row scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(ContractError::ZeroVector(i));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Self::new(self.ids.clone(), self.dim, data, self.modality, true)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Row index of every id.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            if r >= self.len() {
                return Err(ContractError::IndexOutOfRange {
                    index: r,
                    len: self.len(),
                });
            }
            ids.push(self.ids[r].clone());
            data.extend_from_slice(self.row(r));
        }
        Self::new(ids, self.dim, data, self.modality, self.normalized)
    }

    /// Multiplies every entry by `factor`; the result is not flagged normalized.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let data = self.data.iter().map(|x| x * factor).collect();
        Self::new(self.ids.clone(), self.dim, data, self.modality, false)
    }
}

/// Index-aligned photo/sketch embeddings: row `i` of `photos` pairs with row `i` of `sketches`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    photos: EmbeddingMatrix,
    sketches: EmbeddingMatrix,
}

impl LabeledPool {
    pub fn new(photos: EmbeddingMatrix, sketches: EmbeddingMatrix) -> Result<Self> {
        check_dims(photos.dim(), sketches.dim())?;
        if photos.len() != sketches.len() {
            return Err(ContractError::RowMismatch {
                what: "sketches",
                expected: photos.len(),
                got: sketches.len(),
            });
        }
        Ok(LabeledPool { photos, sketches })
    }

    /// Pairs every photo with its sketch by id, reordering `sketches` to match.
    pub fn from_pairing(photos: EmbeddingMatrix, sketches: &EmbeddingMatrix, pairing: &Pairing) -> Result<Self> {
        let index = sketches.index();
        let rows = photos
            .ids()
            .iter()
            .map(|p| {
                pairing
                    .sketch_for(p)
                    .and_then(|s| index.get(s).copied())
                    .ok_or_else(|| ContractError::Invalid(format!("no paired sketch for photo `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let sketches = sketches.select(&rows)?;
        Self::new(photos, sketches)
    }

    pub fn photos(&self) -> &EmbeddingMatrix {
        &self.photos
    }

    pub fn sketches(&self) -> &EmbeddingMatrix {
        &self.sketches
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.photos.dim()
    }

    /// Scales both modalities by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.photos.scaled(factor)?, self.sketches.scaled(factor)?)
    }
}

/// Photos whose sketches have not been acquired.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    photos: EmbeddingMatrix,
}

impl UnlabeledPool {
    pub fn new(photos: EmbeddingMatrix) -> Self {
        UnlabeledPool { photos }
    }

    /// Builds an unlabeled pool that may coexist with `labeled`: dimensions must agree and
    /// no photo may appear in both.
    pub fn alongside(photos: EmbeddingMatrix, labeled: &LabeledPool) -> Result<Self> {
        if !labeled.is_empty() {
            check_dims(labeled.dim(), photos.dim())?;
        }
        let labeled_ids: HashSet<&str> = labeled.photos().ids().iter().map(String::as_str).collect();
        if let Some(id) = photos.ids().iter().find(|id| labeled_ids.contains(id.as_str())) {
            return Err(ContractError::DuplicateId(id.clone()));
        }
        Ok(UnlabeledPool { photos })
    }

    pub fn photos(&self) -> &EmbeddingMatrix {
        &self.photos
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Ok(Self::new(self.photos.scaled(factor)?))
    }
}

/// Bijection between photo ids and sketch ids, stored photo → sketch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pairing {
    photo_to_sketch: BTreeMap<String, String>,
    sketch_to_photo: BTreeMap<String, String>,
}

impl Pairing {
    pub fn new(photo_to_sketch: BTreeMap<String, String>) -> Result<Self> {
        let mut sketch_to_photo = BTreeMap::new();
        for (p, s) in &photo_to_sketch {
            if sketch_to_photo.insert(s.clone(), p.clone()).is_some() {
                return Err(ContractError::DuplicateId(s.clone()));
            }
        }
        Ok(Pairing {
            photo_to_sketch,
            sketch_to_photo,
        })
    }

    pub fn from_pairs<I, P, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (P, S)>,
        P: Into<String>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (p, s) in pairs {
            let p = p.into();
            if map.contains_key(&p) {
                return Err(ContractError::DuplicateId(p));
            }
            map.insert(p, s.into());
        }
        Self::new(map)
    }

    pub fn sketch_for(&self, photo: &str) -> Option<&str> {
        self.photo_to_sketch.get(photo).map(String::as_str)
    }

    pub fn photo_for(&self, sketch: &str) -> Option<&str> {
        self.sketch_to_photo.get(sketch).map(String::as_str)
    }

    pub fn photo_to_sketch(&self) -> &BTreeMap<String, String> {
        &self.photo_to_sketch
    }

    pub fn len(&self) -> usize {
        self.photo_to_sketch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photo_to_sketch.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        // (1,1)-(2,2): sqrt(1 + 1)
        assert_relative_eq!(
            euclidean_distance(&[1.0, 1.0], &[2.0, 2.0]).unwrap(),
            std::f64::consts::SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn distance_dimension_mismatch() {
        assert_eq!(
            euclidean_distance(&[0.0], &[0.0, 1.0]),
            Err(ContractError::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn matrix_invariants() {
        let ids = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            EmbeddingMatrix::new(ids, 1, vec![0.0, 1.0], Modality::Photo, false),
            Err(ContractError::DuplicateId(_))
        ));
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            EmbeddingMatrix::new(ids.clone(), 1, vec![0.0, f64::NAN], Modality::Photo, false),
            Err(ContractError::NonFinite { row: 1, col: 0 })
        ));
        assert!(matches!(
            EmbeddingMatrix::new(ids.clone(), 1, vec![1.0, 2.0], Modality::Photo, true),
            Err(ContractError::NotNormalized { row: 1, .. })
        ));
        let m = EmbeddingMatrix::new(ids, 2, vec![3.0, 4.0, 0.0, 2.0], Modality::Sketch, false)
            .unwrap()
            .normalized()
            .unwrap();
        assert_eq!(m.row(0), &[0.6, 0.8]);
        assert!(m.is_normalized());
    }

    #[test]
    fn zero_row_cannot_normalize() {
        let m = EmbeddingMatrix::new(vec!["z".into()], 2, vec![0.0, 0.0], Modality::Photo, false).unwrap();
        assert_eq!(m.normalized(), Err(ContractError::ZeroVector(0)));
    }

    #[test]
    fn unlabeled_pool_must_be_disjoint() {
        let p = EmbeddingMatrix::new(vec!["a".into()], 1, vec![1.0], Modality::Photo, false).unwrap();
        let s = EmbeddingMatrix::new(vec!["sa".into()], 1, vec![1.0], Modality::Sketch, false).unwrap();
        let labeled = LabeledPool::new(p.clone(), s).unwrap();
        assert!(UnlabeledPool::alongside(p, &labeled).is_err());
    }

    #[test]
    fn pairing_rejects_shared_sketch() {
        assert!(Pairing::from_pairs([("p1", "s"), ("p2", "s")]).is_err());
        let pairing = Pairing::from_pairs([("p1", "s1"), ("p2", "s2")]).unwrap();
        assert_eq!(pairing.photo_for("s2"), Some("p2"));
        assert_eq!(pairing.sketch_for("p1"), Some("s1"));
    }

    #[test]
    fn derived_seeds_differ() {
        let s = Seed(7);
        assert_ne!(s.derive("split", 0), s.derive("split", 1));
        assert_ne!(s.derive("split", 0), s.derive("train", 0));
        assert_eq!(s.derive("split", 3), Seed(7).derive("split", 3));
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 3)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in vec3(), b in vec3(), c in vec3()) {
            let ab = euclidean_distance(&a, &b).unwrap();
            let ba = euclidean_distance(&b, &a).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(ab >= 0.0);
        }
    }
}
