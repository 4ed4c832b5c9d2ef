//! Seeded synthetic photo/sketch raw features.
//!
//! Prototypes are standard normal in `R^m`. Each photo is a prototype plus
//! `N(0, photo_noise²)` noise, and its sketch is `R·photo + b + N(0, sketch_noise²)`,
//! where `R` is a fixed orthonormalized perturbation of the identity and `b` a fixed
//! offset shared by all sketches.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, Modality, Pairing, Seed};
use crate::error::{ContractError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_prototypes: usize,
    pub photos_per_prototype: usize,
    pub raw_dim: usize,
    pub photo_noise: f64,
    pub sketch_noise: f64,
    /// Standard deviation of each entry of the sketch offset `b`.
    pub modality_offset: f64,
    /// Size of the perturbation orthonormalized into `R`; zero gives `R = I`.
    pub rotation_strength: f64,
    pub seed: Seed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_prototypes: 40,
            photos_per_prototype: 10,
            raw_dim: 64,
            photo_noise: 0.25,
            sketch_noise: 0.8,
            modality_offset: 0.5,
            rotation_strength: 5.0,
            seed: Seed(0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prototypes == 0 || self.photos_per_prototype == 0 || self.raw_dim == 0 {
            return Err(ContractError::Invalid("synthetic sizes must be positive".into()));
        }
        let noise = [
            self.photo_noise,
            self.sketch_noise,
            self.modality_offset,
            self.rotation_strength,
        ];
        if noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ContractError::Invalid(
                "noise scales must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn n_photos(&self) -> usize {
        self.n_prototypes * self.photos_per_prototype
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub photos: EmbeddingMatrix,
    pub sketches: EmbeddingMatrix,
    pub pairing: Pairing,
    /// Prototype index of each photo row.
    pub prototype_of: Vec<usize>,
    /// Prototype vectors, `n_prototypes × raw_dim`.
    pub prototypes: Vec<Vec<f64>>,
}

pub fn photo_id(i: usize) -> String {
    format!("p{i:05}")
}

pub fn sketch_id(i: usize) -> String {
    format!("s{i:05}")
}

fn gaussian(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Modified Gram–Schmidt on the rows of `I + strength·G/√m`.
fn near_identity_rotation(rng: &mut impl rand::Rng, m: usize, strength: f64) -> Vec<Vec<f64>> {
    let scale = strength / (m as f64).sqrt();
    let mut rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> = gaussian(rng, m).into_iter().map(|g| g * scale).collect();
            r[i] += 1.0;
            r
        })
        .collect();
    for i in 0..m {
        for j in 0..i {
            let (done, rest) = rows.split_at_mut(i);
            let dot: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(&done[j]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        rows[i].iter_mut().for_each(|x| *x /= norm);
    }
    rows
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let m = config.raw_dim;
    let mut rng = config.seed.rng();
    let prototypes: Vec<Vec<f64>> = (0..config.n_prototypes).map(|_| gaussian(&mut rng, m)).collect();
    let rotation = if config.rotation_strength > 0.0 {
        Some(near_identity_rotation(&mut rng, m, config.rotation_strength))
    } else {
        None
    };
    let offset: Vec<f64> = gaussian(&mut rng, m)
        .into_iter()
        .map(|g| g * config.modality_offset)
        .collect();
    let photo_noise = Normal::new(0.0, config.photo_noise).expect("validated");
    let sketch_noise = Normal::new(0.0, config.sketch_noise).expect("validated");

    let n = config.n_photos();
    let mut photo_data = Vec::with_capacity(n * m);
    let mut sketch_data = Vec::with_capacity(n * m);
    let mut prototype_of = Vec::with_capacity(n);
    for (k, proto) in prototypes.iter().enumerate() {
        for _ in 0..config.photos_per_prototype {
            let photo: Vec<f64> = proto.iter().map(|c| c + photo_noise.sample(&mut rng)).collect();
            let transformed: Vec<f64> = match &rotation {
                Some(r) => r
                    .iter()
                    .map(|row| row.iter().zip(&photo).map(|(a, x)| a * x).sum())
                    .collect(),
                None => photo.clone(),
            };
            sketch_data.extend(
                transformed
                    .iter()
                    .zip(&offset)
                    .map(|(t, b)| t + b + sketch_noise.sample(&mut rng)),
            );
            photo_data.extend(photo);
            prototype_of.push(k);
        }
    }
    let photo_ids: Vec<String> = (0..n).map(photo_id).collect();
    let sketch_ids: Vec<String> = (0..n).map(sketch_id).collect();
    let pairing = Pairing::from_pairs(photo_ids.iter().cloned().zip(sketch_ids.iter().cloned()))?;
    Ok(SynthDataset {
        photos: EmbeddingMatrix::new(photo_ids, m, photo_data, Modality::Photo, false)?,
        sketches: EmbeddingMatrix::new(sketch_ids, m, sketch_data, Modality::Sketch, false)?,
        pairing,
        prototype_of,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::euclidean_distance;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n_prototypes: 5,
            photos_per_prototype: 3,
            raw_dim: 8,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SynthConfig {
            seed: Seed(1),
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(generate(&cfg).unwrap().photos, other.photos);
    }

    #[test]
    fn pairing_is_a_bijection() {
        let d = generate(&SynthConfig::default()).unwrap();
        assert_eq!(d.pairing.len(), 400);
        assert_eq!(d.photos.len(), 400);
        for (i, id) in d.photos.ids().iter().enumerate() {
            assert_eq!(d.pairing.sketch_for(id), Some(d.sketches.id(i)));
        }
    }

    #[test]
    fn noiseless_identity_transform_copies_photos() {
        let cfg = SynthConfig {
            photo_noise: 0.0,
            sketch_noise: 0.0,
            modality_offset: 0.0,
            rotation_strength: 0.0,
            ..SynthConfig::default()
        };
        let d = generate(&cfg).unwrap();
        assert_eq!(d.photos.data(), d.sketches.data());
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = Seed(5).rng();
        let r = near_identity_rotation(&mut rng, 16, 0.5);
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = r[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prototype_distances_concentrate() {
        let cfg = SynthConfig {
            raw_dim: 256,
            ..SynthConfig::default()
        };
        let d = generate(&cfg).unwrap();
        let target = (2.0 * 256.0f64).sqrt();
        let mut dists = Vec::new();
        for i in 0..d.prototypes.len() {
            for j in i + 1..d.prototypes.len() {
                dists.push(euclidean_distance(&d.prototypes[i], &d.prototypes[j]).unwrap());
            }
        }
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        assert!((mean - target).abs() / target < 0.2, "{mean} vs {target}");
        assert!(dists.iter().all(|x| (x - target).abs() / target < 0.2));
    }

    #[test]
    fn rejects_negative_noise() {
        assert!(generate(&SynthConfig {
            photo_noise: -1.0,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
