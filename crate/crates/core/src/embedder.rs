//! Trainable cross-modal embedder: one affine map per modality followed by L2
//! normalization, fitted with the triplet hinge `max(0, d(a, p) - d(a, n) + margin)`
//! where the anchor is a sketch, the positive its photo and the negative another photo.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, distance_unchecked, EmbeddingMatrix, Modality, Seed, NORM_EPS};
use crate::error::{ContractError, FormatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// `W[i][i] = 1` on the leading diagonal, zero elsewhere.
    Identity,
    /// Both branches start from the same Gaussian matrix with entries `N(0, 1/raw_dim)`.
    SharedGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderParams {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init: Init,
}

impl Default for EmbedderParams {
    fn default() -> Self {
        EmbedderParams {
            dim: 256,
            margin: 0.3,
            lr: 1e-4,
            batch_size: 16,
            epochs: 50,
            init: Init::SharedGaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Raw feature vectors of one training triplet.
#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor_sketch: &'a [f64],
    pub positive_photo: &'a [f64],
    pub negative_photo: &'a [f64],
}

/// Triplet hinge on already-embedded vectors.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let pos = distance_unchecked(anchor, positive);
    let neg = distance_unchecked(anchor, negative);
    (pos - neg + margin).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalEmbedder {
    raw_dim: usize,
    dim: usize,
    margin: f64,
    /// `[photo W (dim × raw_dim), photo b, sketch W, sketch b]`, row-major.
    params: Vec<f64>,
    adam: Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: CrossModalEmbedder,
    /// Mean triplet loss of every epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

impl CrossModalEmbedder {
    pub fn new(raw_dim: usize, dim: usize, margin: f64, init: Init, seed: Seed) -> Result<Self> {
        if raw_dim == 0 || dim == 0 {
            return Err(ContractError::Invalid("dimensions must be positive".into()));
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(ContractError::Invalid(format!("margin {margin} must be positive")));
        }
        let block = dim * raw_dim + dim;
        let mut params = vec![0.0; 2 * block];
        let weights: Vec<f64> = match init {
            Init::Identity => {
                let mut w = vec![0.0; dim * raw_dim];
                for i in 0..dim.min(raw_dim) {
                    w[i * raw_dim + i] = 1.0;
                }
                w
            }
            Init::SharedGaussian => {
                let normal = Normal::new(0.0, 1.0 / (raw_dim as f64).sqrt()).expect("valid std");
                let mut rng = seed.rng();
                (0..dim * raw_dim).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        params[..dim * raw_dim].copy_from_slice(&weights);
        params[block..block + dim * raw_dim].copy_from_slice(&weights);
        Ok(CrossModalEmbedder {
            raw_dim,
            dim,
            margin,
            adam: Adam::new(params.len()),
            params,
        })
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Flat parameter vector, layout `[photo W, photo b, sketch W, sketch b]`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dims(self.params.len(), params.len())?;
        if params.iter().any(|x| !x.is_finite()) {
            return Err(ContractError::Invalid("non-finite parameter".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn block_offset(&self, modality: Modality) -> usize {
        match modality {
            Modality::Photo => 0,
            Modality::Sketch => self.dim * self.raw_dim + self.dim,
        }
    }

    fn affine(&self, raw: &[f64], modality: Modality) -> Vec<f64> {
        let off = self.block_offset(modality);
        let (w, b) = self.params[off..].split_at(self.dim * self.raw_dim);
        w.chunks_exact(self.raw_dim)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(raw).map(|(a, x)| a * x).sum::<f64>() + bias)
            .collect()
    }

    /// Embeds one raw feature vector; fails when the affine image is the zero vector.
    pub fn embed(&self, raw: &[f64], modality: Modality) -> Result<Vec<f64>> {
        check_dims(self.raw_dim, raw.len())?;
        let mut z = self.affine(raw, modality);
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ContractError::ZeroVector(0));
        }
        z.iter_mut().for_each(|x| *x /= norm);
        Ok(z)
    }

    /// Embeds every row of a raw feature matrix with the map of its modality.
    pub fn embed_matrix(&self, raw: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        check_dims(self.raw_dim, raw.dim())?;
        let mut data = Vec::with_capacity(raw.len() * self.dim);
        for (i, row) in raw.rows().enumerate() {
            let e = self
                .embed(row, raw.modality())
                .map_err(|_| ContractError::ZeroVector(i))?;
            data.extend(e);
        }
        EmbeddingMatrix::new(raw.ids().to_vec(), self.dim, data, raw.modality(), true)
    }

    /// Mean triplet loss over `triplets` and its gradient with respect to [`Self::params`].
    ///
    /// Normalization uses `sqrt(|z|² + 1e-12)` so the gradient stays finite near zero.
    pub fn objective(&self, triplets: &[Triplet<'_>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        if triplets.is_empty() {
            return (0.0, grad);
        }
        let mut total = 0.0;
        let scale = 1.0 / triplets.len() as f64;
        for t in triplets {
            let a = Forward::new(self, t.anchor_sketch, Modality::Sketch);
            let p = Forward::new(self, t.positive_photo, Modality::Photo);
            let n = Forward::new(self, t.negative_photo, Modality::Photo);
            let d_pos = distance_unchecked(&a.e, &p.e);
            let d_neg = distance_unchecked(&a.e, &n.e);
            let hinge = d_pos - d_neg + self.margin;
            if hinge <= 0.0 {
                continue;
            }
            total += hinge;
            let mut g_a = vec![0.0; self.dim];
            let mut g_p = vec![0.0; self.dim];
            let mut g_n = vec![0.0; self.dim];
            if d_pos > 0.0 {
                for k in 0..self.dim {
                    let u = (a.e[k] - p.e[k]) / d_pos;
                    g_a[k] += u;
                    g_p[k] -= u;
                }
            }
            if d_neg > 0.0 {
                for k in 0..self.dim {
                    let u = (a.e[k] - n.e[k]) / d_neg;
                    g_a[k] -= u;
                    g_n[k] += u;
                }
            }
            a.backward(self, &g_a, scale, &mut grad);
            p.backward(self, &g_p, scale, &mut grad);
            n.backward(self, &g_n, scale, &mut grad);
        }
        (total * scale, grad)
    }

    /// Mean triplet loss over `triplets`, without gradients.
    pub fn loss(&self, triplets: &[Triplet<'_>]) -> f64 {
        self.objective(triplets).0
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        self.adam.update(&mut self.params, grad, lr);
        debug_assert!(self.params.iter().all(|x| x.is_finite()));
    }
}

/// Cached forward pass of one raw vector through one branch.
struct Forward<'a> {
    raw: &'a [f64],
    modality: Modality,
    e: Vec<f64>,
    norm: f64,
}

impl<'a> Forward<'a> {
    fn new(model: &CrossModalEmbedder, raw: &'a [f64], modality: Modality) -> Self {
        let z = model.affine(raw, modality);
        let norm = (z.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
        let e = z.into_iter().map(|x| x / norm).collect();
        Forward { raw, modality, e, norm }
    }

    /// Accumulates `scale * dL/dparams` given `g_e = dL/de`.
    fn backward(&self, model: &CrossModalEmbedder, g_e: &[f64], scale: f64, grad: &mut [f64]) {
        let dot: f64 = self.e.iter().zip(g_e).map(|(e, g)| e * g).sum();
        let off = model.block_offset(self.modality);
        let (g_w, g_b) = grad[off..off + model.dim * model.raw_dim + model.dim].split_at_mut(model.dim * model.raw_dim);
        for k in 0..model.dim {
            let g_z = scale * (g_e[k] - self.e[k] * dot) / self.norm;
            if g_z == 0.0 {
                continue;
            }
            g_b[k] += g_z;
            for (g, x) in g_w[k * model.raw_dim..(k + 1) * model.raw_dim].iter_mut().zip(self.raw) {
                *g += g_z * x;
            }
        }
    }
}

/// Trains a fresh embedder on index-aligned raw photo/sketch features.
///
/// Each epoch shuffles the pairs into batches; every anchor sketch gets its own photo as
/// positive and a uniformly drawn other photo of the same batch as negative.
pub fn train(
    photos: &EmbeddingMatrix,
    sketches: &EmbeddingMatrix,
    params: &EmbedderParams,
    seed: Seed,
) -> Result<TrainOutcome> {
    check_dims(photos.dim(), sketches.dim())?;
    if photos.len() != sketches.len() {
        return Err(ContractError::RowMismatch {
            what: "sketches",
            expected: photos.len(),
            got: sketches.len(),
        });
    }
    let n = photos.len();
    if n < 2 {
        return Err(ContractError::Invalid(format!(
            "training needs at least 2 pairs, got {n}"
        )));
    }
    if params.batch_size == 0 {
        return Err(ContractError::Invalid("batch size must be positive".into()));
    }
    let mut model = CrossModalEmbedder::new(
        photos.dim(),
        params.dim,
        params.margin,
        params.init,
        seed.derive("init", 0),
    )?;
    let mut rng = seed.derive("batches", 0).rng();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(params.batch_size) {
            let triplets: Vec<Triplet<'_>> = batch
                .iter()
                .map(|&i| {
                    let j = draw_negative(&mut rng, i, batch, n);
                    Triplet {
                        anchor_sketch: sketches.row(i),
                        positive_photo: photos.row(i),
                        negative_photo: photos.row(j),
                    }
                })
                .collect();
            let (loss, grad) = model.objective(&triplets);
            epoch_total += loss * batch.len() as f64;
            model.step(&grad, params.lr);
        }
        epoch_losses.push(epoch_total / n as f64);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok(TrainOutcome {
        model,
        epoch_losses,
        final_loss,
    })
}

fn draw_negative<R: Rng>(rng: &mut R, anchor: usize, batch: &[usize], n: usize) -> usize {
    if batch.len() >= 2 {
        loop {
            let j = batch[rng.random_range(0..batch.len())];
            if j != anchor {
                return j;
            }
        }
    }
    // A lone item in the last batch borrows a negative from the whole set.
    let j = rng.random_range(0..n - 1);
    if j >= anchor {
        j + 1
    } else {
        j
    }
}

// Checkpoint layout (little-endian):
//   bytes 0..4    ASCII "EMBM"
//   bytes 4..8    u32 length H of the JSON header
//   next H bytes  JSON {"raw_dim", "dim", "blocks": [names]}
//   then per block: u32 rows, u32 cols, rows·cols f64 values, row-major
// Blocks in order: photo.weight (dim × raw_dim), photo.bias (1 × dim),
// sketch.weight, sketch.bias, margin (1 × 1).

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EMBM";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    raw_dim: usize,
    dim: usize,
    blocks: Vec<String>,
}

const BLOCK_NAMES: [&str; 5] = ["photo.weight", "photo.bias", "sketch.weight", "sketch.bias", "margin"];

impl CrossModalEmbedder {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            raw_dim: self.raw_dim,
            dim: self.dim,
            blocks: BLOCK_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let w = self.dim * self.raw_dim;
        let block = w + self.dim;
        let margin = [self.margin];
        let blocks: [(usize, usize, &[f64]); 5] = [
            (self.dim, self.raw_dim, &self.params[..w]),
            (1, self.dim, &self.params[w..block]),
            (self.dim, self.raw_dim, &self.params[block..block + w]),
            (1, self.dim, &self.params[block + w..]),
            (1, 1, &margin),
        ];
        for (rows, cols, values) in blocks {
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                found: magic,
                expected: CHECKPOINT_MAGIC,
            });
        }
        let header_len = cur.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(cur.take(header_len)?).map_err(|source| FormatError::Json {
                path: "<checkpoint header>".into(),
                source,
            })?;
        if header.blocks != BLOCK_NAMES {
            return Err(ContractError::Invalid(format!("unexpected blocks {:?}", header.blocks)).into());
        }
        let (dim, raw_dim) = (header.dim, header.raw_dim);
        let expected = [(dim, raw_dim), (1, dim), (dim, raw_dim), (1, dim), (1, 1)];
        let mut values = Vec::new();
        for (rows, cols) in expected {
            let (r, c) = (cur.u32()? as usize, cur.u32()? as usize);
            if (r, c) != (rows, cols) {
                return Err(ContractError::Invalid(format!("block shape {r}×{c}, expected {rows}×{cols}")).into());
            }
            for chunk in cur.take(r * c * 8)?.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
        }
        if cur.pos != bytes.len() {
            return Err(FormatError::TrailingBytes {
                found: bytes.len() - cur.pos,
            });
        }
        let margin = values.pop().expect("margin block");
        let mut model = CrossModalEmbedder::new(raw_dim, dim, margin, Init::Identity, Seed(0))?;
        model.set_params(&values)?;
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| FormatError::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, FormatError> {
        let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn loss_examples() {
        // Distances 0.5 and 1.0 along one axis.
        let a = [0.0, 0.0];
        let p = [0.5, 0.0];
        let n = [0.0, 1.0];
        assert_eq!(triplet_loss(&a, &p, &n, 0.2), 0.0);
        assert_relative_eq!(triplet_loss(&a, &n, &p, 0.2), 0.7, epsilon = 1e-15);
        assert_eq!(triplet_loss(&a, &p, &p, 0.3), 0.3);
    }

    #[test]
    fn identity_init_passes_unit_vectors_through() {
        let m = CrossModalEmbedder::new(3, 3, 0.3, Init::Identity, Seed(0)).unwrap();
        let raw = [0.6, 0.0, -0.8];
        assert_eq!(m.embed(&raw, Modality::Photo).unwrap(), raw.to_vec());
        assert_eq!(m.embed(&raw, Modality::Sketch).unwrap(), raw.to_vec());
    }

    #[test]
    fn outputs_are_unit_norm_and_scale_free() {
        let m = CrossModalEmbedder::new(6, 4, 0.3, Init::SharedGaussian, Seed(3)).unwrap();
        let mut rng = Seed(8).rng();
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let e = m.embed(&raw, Modality::Photo).unwrap();
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            let scaled: Vec<f64> = raw.iter().map(|x| x * 3.5).collect();
            let e2 = m.embed(&scaled, Modality::Photo).unwrap();
            for (x, y) in e.iter().zip(&e2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_image_is_an_error() {
        let m = CrossModalEmbedder::new(2, 2, 0.3, Init::Identity, Seed(0)).unwrap();
        assert_eq!(m.embed(&[0.0, 0.0], Modality::Photo), Err(ContractError::ZeroVector(0)));
        assert!(matches!(
            m.embed(&[1.0], Modality::Photo),
            Err(ContractError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(CrossModalEmbedder::new(2, 2, 0.0, Init::Identity, Seed(0)).is_err());
        assert!(CrossModalEmbedder::new(0, 2, 0.3, Init::Identity, Seed(0)).is_err());
    }

    #[test]
    fn training_needs_two_pairs() {
        let one = EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0, 0.0], Modality::Photo, false).unwrap();
        let s = EmbeddingMatrix::new(vec!["sa".into()], 2, vec![1.0, 0.0], Modality::Sketch, false).unwrap();
        assert!(train(&one, &s, &EmbedderParams::default(), Seed(0)).is_err());
    }

    #[test]
    fn lone_batch_member_gets_a_foreign_negative() {
        let mut rng = Seed(1).rng();
        for _ in 0..100 {
            let j = draw_negative(&mut rng, 4, &[4], 5);
            assert!(j < 5 && j != 4);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = CrossModalEmbedder::new(5, 3, 0.25, Init::SharedGaussian, Seed(2)).unwrap();
        let bytes = m.to_checkpoint_bytes();
        let back = CrossModalEmbedder::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.margin(), 0.25);
        assert!(matches!(
            CrossModalEmbedder::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CrossModalEmbedder::from_checkpoint_bytes(&bad),
            Err(FormatError::BadMagic { .. })
        ));
    }
}
