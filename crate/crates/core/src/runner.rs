//! Simulated active-learning experiments.
//!
//! Each seed splits the photos into a training pool and a held-out test set, draws an
//! initial labeled subset, then for every round: trains a fresh embedder on the labeled
//! pairs, evaluates acc@1/acc@10 on the test set, selects `K` unlabeled photos with the
//! configured strategy and asks the oracle for their sketches.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{train, CrossModalEmbedder, EmbedderParams};
use crate::embedding::{EmbeddingMatrix, LabeledPool, Pairing, Seed, UnlabeledPool};
use crate::error::{ContractError, RunError};
use crate::format::{load_embeddings, load_pairs};
use crate::retrieval::evaluate;
use crate::samplers::{sample, SamplingRequest, Strategy};
use crate::synth::{generate, SynthConfig};

/// One acquisition strategy under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    #[serde(default)]
    pub alpha: f64,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, alpha: f64) -> Self {
        StrategySpec { strategy, alpha }
    }

    pub fn effective_alpha(&self) -> Option<f64> {
        self.strategy.effective_alpha(self.alpha)
    }

    /// Display label, e.g. `vi_diverse(alpha=0.3)`.
    pub fn label(&self) -> String {
        match (self.strategy, self.effective_alpha()) {
            (Strategy::ViEnsemble | Strategy::ViDiverse, Some(a)) => format!("{}(alpha={a})", self.strategy),
            _ => self.strategy.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// Raw photo and sketch features in EMB1 files, paired by a `pairs.json`.
    Files {
        photos: PathBuf,
        sketches: PathBuf,
        pairs: PathBuf,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub rounds: usize,
    /// Photos acquired per round; `None` means 8% of the training pool, rounded up.
    pub budget: Option<usize>,
    pub initial_labeled: usize,
    pub strategies: Vec<StrategySpec>,
    pub seeds: Vec<u64>,
    pub embedder: EmbedderParams,
    /// Fraction of photos held out for evaluation.
    pub test_fraction: f64,
    pub data: DataSource,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rounds: 5,
            budget: None,
            initial_labeled: 300,
            strategies: vec![StrategySpec::new(Strategy::ViDiverse, 0.0)],
            seeds: (0..5).collect(),
            embedder: EmbedderParams::default(),
            test_fraction: 0.2,
            data: DataSource::Synthetic(SynthConfig::default()),
            output_dir: PathBuf::from("results"),
        }
    }
}

/// Fraction of the training pool used for the initial labeled set and each round's budget.
pub const ROUND_FRACTION: f64 = 0.08;

impl ExperimentConfig {
    /// Desk-scale preset on the default synthetic data: 320 training photos, 26 of
    /// them labeled initially and 26 more per round, and a small embedder trained with
    /// a larger step size so each round's fit converges in a few hundred epochs.
    pub fn synthetic() -> Self {
        let synth = SynthConfig::default();
        let train = synth.n_photos() - (synth.n_photos() as f64 * 0.2).round() as usize;
        ExperimentConfig {
            initial_labeled: (train as f64 * ROUND_FRACTION).ceil() as usize,
            embedder: EmbedderParams {
                dim: 32,
                lr: 1e-3,
                epochs: 200,
                ..EmbedderParams::default()
            },
            data: DataSource::Synthetic(synth),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn budget_for(&self, n_train: usize) -> usize {
        self.budget
            .unwrap_or_else(|| (n_train as f64 * ROUND_FRACTION).ceil() as usize)
    }

    fn validate(&self, n_photos: usize) -> Result<Split, RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return bad("need at least one strategy and one seed".into());
        }
        if let Some(s) = self.strategies.iter().find(|s| !(0.0..=1.0).contains(&s.alpha)) {
            return bad(format!("alpha {} outside [0, 1]", s.alpha));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        let n_test = (n_photos as f64 * self.test_fraction).round() as usize;
        let n_train = n_photos - n_test;
        if n_test == 0 {
            return bad("test split is empty".into());
        }
        let budget = self.budget_for(n_train);
        if budget == 0 {
            return bad("budget must be positive".into());
        }
        if self.initial_labeled < 2 {
            return bad("initial_labeled must be at least 2".into());
        }
        if self.initial_labeled + self.rounds * budget > n_train {
            return bad(format!(
                "initial_labeled {} + rounds {} × budget {budget} exceeds {n_train} training photos",
                self.initial_labeled, self.rounds
            ));
        }
        Ok(Split { n_test, budget })
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    n_test: usize,
    budget: usize,
}

/// Raw photo features with index-aligned sketches.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub photos: EmbeddingMatrix,
    pub sketches: EmbeddingMatrix,
    pub pairing: Pairing,
}

impl Dataset {
    pub fn load(source: &DataSource) -> Result<Self, RunError> {
        match source {
            DataSource::Synthetic(cfg) => {
                let d = generate(cfg).map_err(|e| RunError::Config(e.to_string()))?;
                Ok(Dataset {
                    photos: d.photos,
                    sketches: d.sketches,
                    pairing: d.pairing,
                })
            }
            DataSource::Files {
                photos,
                sketches,
                pairs,
                normalize,
            } => {
                let mut photos = load_embeddings(photos)?;
                let mut sketches = load_embeddings(sketches)?;
                if *normalize {
                    photos = photos.normalized().map_err(|e| RunError::Config(e.to_string()))?;
                    sketches = sketches.normalized().map_err(|e| RunError::Config(e.to_string()))?;
                }
                let pairing = load_pairs(pairs)?;
                Self::aligned(photos, &sketches, pairing)
            }
        }
    }

    /// Reorders `sketches` so row `i` is the sketch of photo `i`.
    pub fn aligned(photos: EmbeddingMatrix, sketches: &EmbeddingMatrix, pairing: Pairing) -> Result<Self, RunError> {
        let index = sketches.index();
        let rows = photos
            .ids()
            .iter()
            .map(|p| {
                pairing
                    .sketch_for(p)
                    .and_then(|s| index.get(s).copied())
                    .ok_or_else(|| RunError::Config(format!("photo `{p}` has no sketch in the pairing")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sketches = sketches.select(&rows).map_err(|e| RunError::Config(e.to_string()))?;
        if photos.dim() != sketches.dim() {
            return Err(RunError::Config("photo and sketch features differ in dimension".into()));
        }
        Ok(Dataset {
            photos,
            sketches,
            pairing,
        })
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }
}

/// Reveals the paired sketch of queried photos, and nothing else.
#[derive(Debug)]
pub struct Oracle<'a> {
    dataset: &'a Dataset,
    revealed: BTreeSet<usize>,
}

impl<'a> Oracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Oracle {
            dataset,
            revealed: BTreeSet::new(),
        }
    }

    /// Returns the sketch row paired with photo row `photo`.
    pub fn query(&mut self, photo: usize) -> Result<usize, ContractError> {
        let id = self.dataset.photos.id(photo);
        if self.dataset.pairing.sketch_for(id).is_none() {
            return Err(ContractError::Invalid(format!("no sketch for photo `{id}`")));
        }
        self.revealed.insert(photo);
        Ok(photo)
    }

    pub fn revealed(&self) -> &BTreeSet<usize> {
        &self.revealed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlRoundRecord {
    pub round: usize,
    pub strategy: Strategy,
    pub alpha: Option<f64>,
    pub labeled_size: usize,
    pub acc1: f64,
    pub acc10: f64,
    pub selected: Vec<String>,
    pub seed: u64,
    pub wall_ms: u64,
}

impl AlRoundRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        AlRoundRecord {
            wall_ms: 0,
            ..self.clone()
        } == AlRoundRecord {
            wall_ms: 0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub spec: StrategySpec,
    pub seed: u64,
    pub records: Vec<AlRoundRecord>,
    /// Initial test/train split, shared by every strategy run under this seed.
    pub test_ids: Vec<String>,
    pub initial_labeled: Vec<String>,
    /// Labeled photo ids after the last round's acquisition.
    pub final_labeled: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
}

fn embed_rows(
    model: &CrossModalEmbedder,
    m: &EmbeddingMatrix,
    rows: &[usize],
) -> Result<EmbeddingMatrix, ContractError> {
    model.embed_matrix(&m.select(rows)?)
}

/// Runs one strategy for one seed.
pub fn run_seed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    spec: StrategySpec,
    seed: u64,
) -> Result<SeedRun, RunError> {
    let split = config.validate(dataset.len())?;
    let root = Seed(seed);
    let seed_err = |source| RunError::Seed { seed, source };

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut root.derive("split", 0).rng());
    let mut test: Vec<usize> = order[..split.n_test].to_vec();
    test.sort_unstable();
    let mut train_pool: Vec<usize> = order[split.n_test..].to_vec();
    train_pool.sort_unstable();

    let mut rng = root.derive("initial", 0).rng();
    let mut initial: Vec<usize> = rand::seq::index::sample(&mut rng, train_pool.len(), config.initial_labeled)
        .into_iter()
        .map(|i| train_pool[i])
        .collect();
    initial.sort_unstable();

    let mut oracle = Oracle::new(dataset);
    for &p in &initial {
        oracle.query(p).map_err(seed_err)?;
    }
    let mut labeled: Vec<usize> = initial.clone();
    let mut unlabeled: Vec<usize> = train_pool.iter().copied().filter(|p| !labeled.contains(p)).collect();

    let mut records = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let started = Instant::now();
        let round_err = |source| RunError::Round { seed, round, source };

        // Training uses only oracle-revealed sketches.
        let sketch_rows: Vec<usize> = labeled
            .iter()
            .map(|p| {
                debug_assert!(oracle.revealed().contains(p));
                *p
            })
            .collect();
        let train_photos = dataset.photos.select(&labeled).map_err(round_err)?;
        let train_sketches = dataset.sketches.select(&sketch_rows).map_err(round_err)?;
        let model = train(
            &train_photos,
            &train_sketches,
            &config.embedder,
            root.derive("train", round as u64),
        )
        .map_err(round_err)?
        .model;

        let gallery = embed_rows(&model, &dataset.photos, &test).map_err(round_err)?;
        let queries = embed_rows(&model, &dataset.sketches, &test).map_err(round_err)?;
        let q10 = 10.min(gallery.len());
        let eval = evaluate(&queries, &gallery, &dataset.pairing, &[1, q10]).map_err(round_err)?;

        let pool = LabeledPool::new(
            model.embed_matrix(&train_photos).map_err(round_err)?,
            model.embed_matrix(&train_sketches).map_err(round_err)?,
        )
        .map_err(round_err)?;
        let candidates = UnlabeledPool::alongside(
            embed_rows(&model, &dataset.photos, &unlabeled).map_err(round_err)?,
            &pool,
        )
        .map_err(round_err)?;
        let mut req = SamplingRequest::new(
            &pool,
            &candidates,
            spec.strategy,
            split.budget,
            spec.alpha,
            root.derive("sample", round as u64),
        );
        req.alpha = spec.effective_alpha().unwrap_or(spec.alpha);
        let query = sample(&req).map_err(round_err)?;

        let row_of: HashMap<&str, usize> = unlabeled.iter().map(|&r| (dataset.photos.id(r), r)).collect();
        let picked: Vec<usize> = query.ids().iter().map(|id| row_of[id.as_str()]).collect();
        for &p in &picked {
            oracle.query(p).map_err(round_err)?;
        }
        let labeled_size = labeled.len();
        labeled.extend(&picked);
        let picked_set: BTreeSet<usize> = picked.into_iter().collect();
        unlabeled.retain(|p| !picked_set.contains(p));

        records.push(AlRoundRecord {
            round,
            strategy: spec.strategy,
            alpha: spec.effective_alpha(),
            labeled_size,
            acc1: eval.acc_at[&1],
            acc10: eval.acc_at[&q10],
            selected: query.into_ids(),
            seed,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    let ids = |rows: &[usize]| {
        rows.iter()
            .map(|&r| dataset.photos.id(r).to_string())
            .collect::<Vec<_>>()
    };
    Ok(SeedRun {
        spec,
        seed,
        records,
        test_ids: ids(&test),
        initial_labeled: ids(&initial),
        final_labeled: ids(&labeled),
    })
}

/// Runs every configured strategy for every seed; runs execute in parallel and are
/// returned in (strategy, seed) config order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    let dataset = Dataset::load(&config.data)?;
    run_experiment_on(config, &dataset)
}

pub fn run_experiment_on(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentResult, RunError> {
    config.validate(dataset.len())?;
    let jobs: Vec<(StrategySpec, u64)> = config
        .strategies
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(spec, seed)| run_seed(config, dataset, spec, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult { runs })
}

/// Mean and population standard deviation of one strategy at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAggregate {
    pub round: usize,
    pub strategy: Strategy,
    pub alpha: Option<f64>,
    pub mean_acc1: f64,
    pub std_acc1: f64,
    pub mean_acc10: f64,
    pub std_acc10: f64,
    pub n_seeds: usize,
}

impl RoundAggregate {
    pub fn label(&self) -> String {
        match (self.strategy, self.alpha) {
            (Strategy::ViEnsemble | Strategy::ViDiverse, Some(a)) => format!("{}(alpha={a})", self.strategy),
            _ => self.strategy.to_string(),
        }
    }
}

/// `(mean, population std)` of a non-empty sample.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups runs by strategy and alpha (first-seen order) and averages each round over seeds.
pub fn aggregate(runs: &[SeedRun]) -> Result<Vec<RoundAggregate>, RunError> {
    let mut groups: Vec<(StrategySpec, Vec<&SeedRun>)> = Vec::new();
    for run in runs {
        let key = (run.spec.strategy, run.spec.effective_alpha());
        match groups
            .iter_mut()
            .find(|(s, _)| (s.strategy, s.effective_alpha()) == key)
        {
            Some((_, members)) => members.push(run),
            None => groups.push((run.spec, vec![run])),
        }
    }
    let mut out = Vec::new();
    for (spec, members) in groups {
        if members.len() < 2 {
            return Err(RunError::TooFewSeeds(members.len()));
        }
        let rounds = members[0].records.len();
        if let Some(bad) = members.iter().find(|r| r.records.len() != rounds) {
            return Err(RunError::RoundMismatch {
                label: spec.label(),
                seed: bad.seed,
                expected: rounds,
                got: bad.records.len(),
            });
        }
        for round in 0..rounds {
            let acc1: Vec<f64> = members.iter().map(|r| r.records[round].acc1).collect();
            let acc10: Vec<f64> = members.iter().map(|r| r.records[round].acc10).collect();
            let (mean_acc1, std_acc1) = mean_std(&acc1);
            let (mean_acc10, std_acc10) = mean_std(&acc10);
            out.push(RoundAggregate {
                round,
                strategy: spec.strategy,
                alpha: spec.effective_alpha(),
                mean_acc1,
                std_acc1,
                mean_acc10,
                std_acc10,
                n_seeds: members.len(),
            });
        }
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Every record of every run as CSV, one row per (strategy, seed, round).
pub fn records_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from("strategy,alpha,seed,round,labeled_size,acc1,acc10,selected\n");
    for run in runs {
        for r in &run.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.strategy,
                r.alpha.map(|a| a.to_string()).unwrap_or_default(),
                r.seed,
                r.round,
                r.labeled_size,
                r.acc1,
                r.acc10,
                r.selected.join(" "),
            ));
        }
    }
    out
}
