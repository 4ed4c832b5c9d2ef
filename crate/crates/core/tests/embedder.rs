use rand::Rng;
use vi_sampler::embedder::{train, CrossModalEmbedder, EmbedderParams, Init, Triplet};
use vi_sampler::retrieval::acc_at_q;
use vi_sampler::{EmbeddingMatrix, Modality, Pairing, Seed};

/// Independent forward pass over the flat `[Wp, bp, Ws, bs]` parameter layout.
fn reference_embed(params: &[f64], raw_dim: usize, dim: usize, x: &[f64], sketch: bool) -> Vec<f64> {
    let block = dim * raw_dim + dim;
    let off = if sketch { block } else { 0 };
    let w = &params[off..off + dim * raw_dim];
    let b = &params[off + dim * raw_dim..off + block];
    let z: Vec<f64> = (0..dim)
        .map(|k| (0..raw_dim).map(|j| w[k * raw_dim + j] * x[j]).sum::<f64>() + b[k])
        .collect();
    let n = (z.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
    z.iter().map(|v| v / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn hinges(params: &[f64], raw_dim: usize, dim: usize, margin: f64, t: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    t.iter()
        .map(|(a, p, n)| {
            let ea = reference_embed(params, raw_dim, dim, a, true);
            let ep = reference_embed(params, raw_dim, dim, p, false);
            let en = reference_embed(params, raw_dim, dim, n, false);
            dist(&ea, &ep) - dist(&ea, &en) + margin
        })
        .collect()
}

fn reference_loss(
    params: &[f64],
    raw_dim: usize,
    dim: usize,
    margin: f64,
    t: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
) -> f64 {
    let h = hinges(params, raw_dim, dim, margin, t);
    h.iter().map(|v| v.max(0.0)).sum::<f64>() / h.len() as f64
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn gradient_matches_central_differences() {
    let (raw_dim, dim, margin, h) = (6, 4, 0.3, 1e-5);
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 12 {
        seed += 1;
        assert!(seed < 200, "could not find enough non-degenerate points");
        let mut rng = Seed(seed).rng();
        let mut model = CrossModalEmbedder::new(raw_dim, dim, margin, Init::SharedGaussian, Seed(seed)).unwrap();
        let params: Vec<f64> = model.params().iter().map(|p| p + rng.random_range(-0.3..0.3)).collect();
        model.set_params(&params).unwrap();
        let raw: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..5)
            .map(|_| {
                (
                    gaussian_vec(&mut rng, raw_dim),
                    gaussian_vec(&mut rng, raw_dim),
                    gaussian_vec(&mut rng, raw_dim),
                )
            })
            .collect();
        let hs = hinges(&params, raw_dim, dim, margin, &raw);
        // Stay away from the kink of the hinge, where the derivative is undefined.
        if hs.iter().any(|v| v.abs() < 1e-3) || hs.iter().all(|v| *v <= 0.0) {
            continue;
        }
        let triplets: Vec<Triplet<'_>> = raw
            .iter()
            .map(|(a, p, n)| Triplet {
                anchor_sketch: a,
                positive_photo: p,
                negative_photo: n,
            })
            .collect();
        let (loss, grad) = model.objective(&triplets);
        let want = reference_loss(&params, raw_dim, dim, margin, &raw);
        assert!((loss - want).abs() < 1e-12, "loss {loss} vs reference {want}");

        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[i] += h;
                minus[i] -= h;
                (reference_loss(&plus, raw_dim, dim, margin, &raw) - reference_loss(&minus, raw_dim, dim, margin, &raw))
                    / (2.0 * h)
            })
            .collect();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(
            diff / scale < 1e-4,
            "seed {seed}: relative gradient error {}",
            diff / scale
        );
        checked += 1;
    }
}

fn toy_pairs(n: usize, raw_dim: usize, seed: u64) -> (EmbeddingMatrix, EmbeddingMatrix, Pairing) {
    let mut rng = Seed(seed).rng();
    let mut photos = Vec::new();
    let mut sketches = Vec::new();
    for _ in 0..n {
        let p = gaussian_vec(&mut rng, raw_dim);
        // Sketches are a fixed permutation of the photo plus noise.
        let mut s: Vec<f64> = p.iter().rev().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
        s[0] += 0.5;
        photos.extend(p);
        sketches.extend(s);
    }
    let pids: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
    let sids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
    let pairing = Pairing::from_pairs(pids.iter().cloned().zip(sids.iter().cloned())).unwrap();
    (
        EmbeddingMatrix::new(pids, raw_dim, photos, Modality::Photo, false).unwrap(),
        EmbeddingMatrix::new(sids, raw_dim, sketches, Modality::Sketch, false).unwrap(),
        pairing,
    )
}

fn all_triplets_loss(model: &CrossModalEmbedder, photos: &EmbeddingMatrix, sketches: &EmbeddingMatrix) -> f64 {
    let mut t = Vec::new();
    for i in 0..photos.len() {
        for j in 0..photos.len() {
            if i != j {
                t.push(Triplet {
                    anchor_sketch: sketches.row(i),
                    positive_photo: photos.row(i),
                    negative_photo: photos.row(j),
                });
            }
        }
    }
    model.loss(&t)
}

fn small_params(epochs: usize) -> EmbedderParams {
    EmbedderParams {
        dim: 8,
        lr: 1e-3,
        batch_size: 8,
        epochs,
        ..EmbedderParams::default()
    }
}

#[test]
fn full_triplet_loss_falls_over_epochs() {
    let (photos, sketches, _) = toy_pairs(20, 8, 3);
    let epochs = 60;
    // Training is a deterministic prefix: `e` epochs reproduce the first `e` of a longer run.
    let losses: Vec<f64> = (0..=epochs)
        .map(|e| {
            let m = train(&photos, &sketches, &small_params(e), Seed(9)).unwrap().model;
            all_triplets_loss(&m, &photos, &sketches)
        })
        .collect();
    let upticks = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(losses[epochs] < 0.5 * losses[0], "{} → {}", losses[0], losses[epochs]);
    assert!(
        upticks as f64 <= 0.05 * epochs as f64,
        "{upticks} upticks in {losses:?}"
    );
}

#[test]
fn training_does_not_hurt_train_retrieval() {
    let (photos, sketches, pairing) = toy_pairs(20, 8, 4);
    let before = train(&photos, &sketches, &small_params(0), Seed(1)).unwrap().model;
    let after = train(&photos, &sketches, &small_params(600), Seed(1)).unwrap().model;
    let acc = |m: &CrossModalEmbedder| {
        acc_at_q(
            &m.embed_matrix(&sketches).unwrap(),
            &m.embed_matrix(&photos).unwrap(),
            &pairing,
            1,
        )
        .unwrap()
    };
    assert!(acc(&after) >= acc(&before), "{} < {}", acc(&after), acc(&before));
    assert!(acc(&after) > acc(&before) + 0.2, "{} -> {}", acc(&before), acc(&after));
}

#[test]
fn retraining_is_bit_exact() {
    let (photos, sketches, _) = toy_pairs(13, 5, 5);
    let a = train(&photos, &sketches, &small_params(7), Seed(2)).unwrap();
    let b = train(&photos, &sketches, &small_params(7), Seed(2)).unwrap();
    assert_eq!(a, b);
    let c = train(&photos, &sketches, &small_params(7), Seed(3)).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn satisfied_margins_give_zero_loss_and_no_update() {
    // With identity maps each sketch coincides with its photo and is √2 from the others.
    let photos = EmbeddingMatrix::new(
        vec!["a".into(), "b".into(), "c".into()],
        3,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        Modality::Photo,
        false,
    )
    .unwrap();
    let sketches = EmbeddingMatrix::new(
        vec!["x".into(), "y".into(), "z".into()],
        3,
        photos.data().to_vec(),
        Modality::Sketch,
        false,
    )
    .unwrap();
    let params = EmbedderParams {
        dim: 3,
        epochs: 5,
        batch_size: 2,
        init: Init::Identity,
        ..EmbedderParams::default()
    };
    let out = train(&photos, &sketches, &params, Seed(0)).unwrap();
    assert!(out.epoch_losses.iter().all(|&l| l == 0.0));
    let fresh = CrossModalEmbedder::new(3, 3, 0.3, Init::Identity, Seed(0)).unwrap();
    assert_eq!(out.model.params(), fresh.params());
}
