//! `vi-sampler`: violation-index active learning from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vi_sampler::format::{load_embeddings, load_pairs, save_embeddings, save_pairs};
use vi_sampler::report::{emit_records, emit_results, parse_results_csv, plot_svg};
use vi_sampler::retrieval::evaluate;
use vi_sampler::runner::{aggregate, run_experiment, ExperimentConfig};
use vi_sampler::samplers::{sample, SamplingRequest, Strategy};
use vi_sampler::synth::{generate, SynthConfig};
use vi_sampler::violation::score_pool;
use vi_sampler::{EmbeddingMatrix, LabeledPool, Seed, UnlabeledPool};

#[derive(Parser)]
#[command(
    name = "vi-sampler",
    version,
    about = "Violation-index active learning for photo/sketch retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic raw photo/sketch features and their pairing.
    Gen(GenArgs),
    /// Score unlabeled photos by violation index (CSV `id,vi`).
    Score(PoolArgs),
    /// Select a batch of unlabeled photos to annotate (JSON list of ids).
    Sample(SampleArgs),
    /// Sketch→photo retrieval accuracy (CSV `q,acc`).
    Eval(EvalArgs),
    /// Run a full simulated active-learning experiment.
    Run(RunArgs),
    /// Re-render the learning-curve plot from a results.csv.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for photos.emb, sketches.emb and pairs.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic-data config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prototypes: Option<usize>,
    #[arg(long)]
    per_prototype: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a random split: N labeled photo/sketch pairs plus the remaining photos.
    #[arg(long, value_name = "N")]
    split_labeled: Option<usize>,
}

#[derive(Args)]
struct PoolArgs {
    /// Labeled photo embeddings (EMB1).
    #[arg(long)]
    labeled_photos: PathBuf,
    /// Labeled sketch embeddings (EMB1).
    #[arg(long)]
    labeled_sketches: PathBuf,
    /// pairs.json mapping labeled photo ids to sketch ids.
    #[arg(long)]
    pairs: PathBuf,
    /// Unlabeled photo embeddings (EMB1).
    #[arg(long)]
    unlabeled: PathBuf,
    /// Use embeddings as stored instead of L2-normalizing them on load.
    #[arg(long)]
    no_normalize: bool,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    pools: PoolArgs,
    /// random, kmeans_centroid, coreset, vi_min, vi_max, vi_ensemble or vi_diverse.
    #[arg(long)]
    strategy: Strategy,
    /// Number of photos to select.
    #[arg(long)]
    budget: usize,
    /// Share of the budget taken from the low-VI end (VI strategies only).
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Seed for the randomized strategies and k-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Query sketch embeddings (EMB1).
    #[arg(long)]
    sketches: PathBuf,
    /// Gallery photo embeddings (EMB1).
    #[arg(long)]
    gallery: PathBuf,
    /// pairs.json giving each sketch's true photo.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    q: Vec<usize>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); `synthetic` selects the built-in desk-scale preset.
    #[arg(long)]
    config: String,
    /// Overrides the config's output_dir.
    #[arg(long, env = "VI_SAMPLER_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// A results.csv written by `run`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &Path, normalize: bool) -> Result<EmbeddingMatrix> {
    let m = load_embeddings(path).with_context(|| format!("loading {}", path.display()))?;
    if normalize && !m.is_normalized() {
        return m
            .normalized()
            .with_context(|| format!("normalizing {}", path.display()));
    }
    Ok(m)
}

fn load_pools(args: &PoolArgs) -> Result<(LabeledPool, UnlabeledPool)> {
    let normalize = !args.no_normalize;
    let pairing = load_pairs(&args.pairs).with_context(|| format!("loading {}", args.pairs.display()))?;
    let labeled = LabeledPool::from_pairing(
        load(&args.labeled_photos, normalize)?,
        &load(&args.labeled_sketches, normalize)?,
        &pairing,
    )?;
    let unlabeled = UnlabeledPool::alongside(load(&args.unlabeled, normalize)?, &labeled)?;
    Ok((labeled, unlabeled))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(args: GenArgs) -> Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => {
            serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = args.prototypes {
        config.n_prototypes = v;
    }
    if let Some(v) = args.per_prototype {
        config.photos_per_prototype = v;
    }
    if let Some(v) = args.dim {
        config.raw_dim = v;
    }
    if let Some(v) = args.seed {
        config.seed = Seed(v);
    }
    let data = generate(&config)?;
    fs::create_dir_all(&args.out)?;
    save_embeddings(&data.photos, &args.out.join("photos.emb"))?;
    save_embeddings(&data.sketches, &args.out.join("sketches.emb"))?;
    save_pairs(&data.pairing, &args.out.join("pairs.json"))?;
    if let Some(n) = args.split_labeled {
        if n > data.photos.len() {
            bail!("cannot label {n} of {} photos", data.photos.len());
        }
        let mut rng = config.seed.derive("split", 0).rng();
        let mut labeled: Vec<usize> = rand::seq::index::sample(&mut rng, data.photos.len(), n).into_vec();
        labeled.sort_unstable();
        let rest: Vec<usize> = (0..data.photos.len())
            .filter(|i| labeled.binary_search(i).is_err())
            .collect();
        save_embeddings(&data.photos.select(&labeled)?, &args.out.join("labeled_photos.emb"))?;
        save_embeddings(&data.sketches.select(&labeled)?, &args.out.join("labeled_sketches.emb"))?;
        save_embeddings(&data.photos.select(&rest)?, &args.out.join("unlabeled_photos.emb"))?;
    }
    eprintln!(
        "wrote {} photo/sketch pairs ({} dims) to {}",
        data.photos.len(),
        data.photos.dim(),
        args.out.display()
    );
    Ok(())
}

fn score(args: PoolArgs) -> Result<()> {
    let (labeled, unlabeled) = load_pools(&args)?;
    let scores = score_pool(&unlabeled, &labeled)?;
    if !scores.degenerate.is_empty() {
        eprintln!(
            "warning: {} photo(s) coincide with a labeled sketch",
            scores.degenerate.len()
        );
    }
    emit(args.out.as_deref(), &scores.to_csv())
}

fn sample_cmd(args: SampleArgs) -> Result<()> {
    let (labeled, unlabeled) = load_pools(&args.pools)?;
    let alpha = args.strategy.effective_alpha(args.alpha).unwrap_or(args.alpha);
    let req = SamplingRequest::new(&labeled, &unlabeled, args.strategy, args.budget, alpha, Seed(args.seed));
    let picked = sample(&req)?;
    emit(
        args.pools.out.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&picked)?),
    )
}

fn eval(args: EvalArgs) -> Result<()> {
    let normalize = !args.no_normalize;
    let sketches = load(&args.sketches, normalize)?;
    let gallery = load(&args.gallery, normalize)?;
    let pairing = load_pairs(&args.pairs)?;
    let result = evaluate(&sketches, &gallery, &pairing, &args.q)?;
    emit(args.out.as_deref(), &result.to_csv())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = if args.config == "synthetic" {
        ExperimentConfig::synthetic()
    } else {
        let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config))?;
        ExperimentConfig::from_json(&text)?
    };
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    let result = run_experiment(&config)?;
    let aggregates = aggregate(&result.runs)?;
    let mut written = emit_results(&aggregates, &config.output_dir)?;
    written.push(emit_records(&result.runs, &config.output_dir)?);
    for agg in aggregates.iter().filter(|a| a.round + 1 == config.rounds) {
        eprintln!(
            "{:<28} final acc@1 {:.4} ± {:.4}   acc@10 {:.4} ± {:.4}",
            agg.label(),
            agg.mean_acc1,
            agg.std_acc1,
            agg.mean_acc10,
            agg.std_acc10
        );
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&args.results).with_context(|| format!("reading {}", args.results.display()))?;
    let aggregates = parse_results_csv(&text)?;
    if aggregates.is_empty() {
        bail!("{} has no data rows", args.results.display());
    }
    fs::write(&args.out, plot_svg(&aggregates)).with_context(|| format!("writing {}", args.out.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Score(a) => score(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Plot(a) => plot(a),
    }
}
