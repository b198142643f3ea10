//! Command-line surface: `train`, `evaluate` and `recommend` commands
//! over the TSV data format and the binary model format, with stable
//! exit codes (0 success, 2 usage, 3 data, 4 numeric) and seeded,
//! reproducible runs.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::als::{train_ials, train_ials_pairwise, train_sgd_gramian, AlsConfig, SgdGramianConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{compute_gramians, LossConfig, LossKind};
use crate::metrics::{evaluate_model, Metric};
use crate::model::FactorModel;
use crate::samplers::{SamplerConfig, SamplerKind};
use crate::sgd::{train_sgd, SgdObjective, TrainConfig, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    SgdPointwise,
    SgdPairwise,
    SgdSsm,
    Ials,
    IalsPairwise,
    SgdGramian,
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sgd-pointwise" => Ok(Solver::SgdPointwise),
            "sgd-pairwise" => Ok(Solver::SgdPairwise),
            "sgd-ssm" => Ok(Solver::SgdSsm),
            "ials" => Ok(Solver::Ials),
            "ials-pairwise" => Ok(Solver::IalsPairwise),
            "sgd-gramian" => Ok(Solver::SgdGramian),
            other => Err(Error::invalid(format!(
                "unknown solver {other:?} (expected sgd-pointwise, sgd-pairwise, \
                 sgd-ssm, ials, ials-pairwise or sgd-gramian)"
            ))),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "imfrec",
    version,
    about = "Matrix-factorization recommenders from implicit feedback: \
             training, evaluation and top-n retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a factor model on a TSV interaction file.
    Train(TrainArgs),
    /// Report ranking metrics of a saved model on a test split.
    Evaluate(EvaluateArgs),
    /// Print the top-n items for a context or an ad-hoc history.
    Recommend(RecommendArgs),
}

/// Flags shared with `key=value` config files. Every optional flag has
/// the deterministic default stated in its help text; a value given on
/// the command line beats the config file, which beats the default.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TSV interaction file: context<TAB>item[<TAB>label[<TAB>weight]].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional config file of key=value lines mapping 1:1 to flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to persist the trained model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Saved model to continue from instead of a fresh initialization.
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    /// One of sgd-pointwise, sgd-pairwise, sgd-ssm, ials,
    /// ials-pairwise, sgd-gramian [default: ials].
    #[arg(long)]
    pub solver: Option<String>,
    /// Embedding dimension of fresh models [default: 16].
    #[arg(long)]
    pub dims: Option<usize>,
    /// Stddev of the Normal(0, sigma^2) initialization
    /// [default: 0.1/sqrt(dims)].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Training epochs [default: 16 for ials solvers, 32 for
    /// sgd-gramian, 10 otherwise].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// SGD learning rate [default: 0.05].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight of every unobserved pair [default: 0.1].
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// L2 regularization strength [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Softmax inverse temperature [default: 1].
    #[arg(long)]
    pub nu: Option<f64>,
    /// Pointwise/pairwise loss: square, logistic or hinge
    /// [default: square pointwise, logistic pairwise].
    #[arg(long)]
    pub loss: Option<String>,
    /// Negative sampler: uniform, popularity, in-batch, warp, adaptive,
    /// kernel or two-pass [default: uniform].
    #[arg(long)]
    pub sampler: Option<String>,
    /// Negatives per positive [default: 1].
    #[arg(long)]
    pub m: Option<usize>,
    /// Popularity squashing exponent [default: 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rank temperature of the adaptive sampler [default: 10].
    #[arg(long)]
    pub gamma_adaptive: Option<f64>,
    /// WARP rejection budget [default: catalog size].
    #[arg(long)]
    pub warp_max_trials: Option<usize>,
    /// WARP acceptance margin [default: 1].
    #[arg(long)]
    pub warp_margin: Option<f64>,
    /// Use the literal printed WARP rank formula [default: false].
    #[arg(long)]
    pub warp_printed_rank: Option<bool>,
    /// First-stage size M of the two-pass sampler [default: 32].
    #[arg(long)]
    pub first_stage_size: Option<usize>,
    /// Additive constant of the kernel sampler [default: 1].
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Batch size of the in-batch sampler windows [default: 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Draws between sampler state rebuilds [default: 1024].
    #[arg(long)]
    pub refresh_every: Option<usize>,
    /// Pairwise pair weighting: constant, lambda-rank or warp-penalty
    /// [default: constant].
    #[arg(long)]
    pub weighting: Option<String>,
    /// Metric of the lambda-rank weighting [default: ndcg].
    #[arg(long)]
    pub weight_metric: Option<String>,
    /// Cutoff n of the lambda-rank weighting metric [default: 10].
    #[arg(long)]
    pub weight_n: Option<usize>,
    /// Moving-average rate of the sgd-gramian estimates [default: 0.02].
    #[arg(long)]
    pub estimate_rate: Option<f64>,
    /// Start sgd-gramian estimates from the exact Gramians
    /// [default: true].
    #[arg(long)]
    pub exact_init: Option<bool>,
    /// Worker threads of the ials block passes [default: 1].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Saved model to evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Optional config file of key=value lines mapping 1:1 to flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TSV interaction file: the test split, or the full data when
    /// --split is given.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate training split used only for --filter-train.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// `leave-k-out` derives train/test from --data [default: none].
    #[arg(long)]
    pub split: Option<String>,
    /// Interactions held out per context by the split [default: 1].
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed of the split shuffle [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated metrics from prec, recall, ap, ndcg, auc
    /// [default: all of them].
    #[arg(long)]
    pub metrics: Option<String>,
    /// Ranking cutoff n [default: 10].
    #[arg(long)]
    pub n: Option<usize>,
    /// Exclude each context's training items from its ranking.
    #[arg(long)]
    pub filter_train: bool,
    /// Print CSV instead of the tab-separated table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct RecommendArgs {
    /// Saved model to retrieve from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Optional config file of key=value lines mapping 1:1 to flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Context id to recommend for.
    #[arg(long)]
    pub context: Option<usize>,
    /// Comma-separated item ids: fold in an ad-hoc context instead of
    /// using --context.
    #[arg(long)]
    pub history: Option<String>,
    /// TSV interaction file, needed by --exclude-seen with --context.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of items to print [default: 10].
    #[arg(long)]
    pub n: Option<usize>,
    /// Drop the context's observed items from the list.
    #[arg(long)]
    pub exclude_seen: bool,
    /// Unobserved-pair weight of the fold-in solve [default: 0.1].
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Regularization of the fold-in solve [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
}

/// Key=value pairs from a `--config` file. Keys are normalized so
/// `learning-rate` and `learning_rate` both address the
/// `--learning-rate` flag; every key must be consumed by the command.
struct Overlay {
    values: HashMap<String, String>,
    consumed: HashSet<String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl Overlay {
    fn empty() -> Self {
        Overlay {
            values: HashMap::new(),
            consumed: HashSet::new(),
        }
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config line {} is not key=value: {line:?}",
                    lineno + 1
                )));
            };
            values.insert(normalize_key(key), value.trim().to_string());
        }
        Ok(Overlay {
            values,
            consumed: HashSet::new(),
        })
    }

    /// Flag value, else config value, else default.
    fn resolve<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.resolve_opt(flag, key)?.unwrap_or(default))
    }

    /// As `resolve` but without a default.
    fn resolve_opt<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.consumed.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e: T::Err| Error::invalid(format!("config key {key}={raw:?}: {e}"))),
        }
    }

    /// Boolean switch: true if the flag was given or the config file
    /// sets the key to true.
    fn resolve_switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        Ok(self.resolve(if flag { Some(true) } else { None }, key, false)?)
    }

    fn finish(self) -> Result<()> {
        let mut unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        unknown.sort();
        if let Some(key) = unknown.first() {
            return Err(Error::invalid(format!(
                "config key {key} does not match any flag of this command"
            )));
        }
        Ok(())
    }
}

fn require_file(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::invalid(format!("missing required flag --{flag}")))?;
    if !path.exists() {
        return Err(Error::invalid(format!(
            "--{flag} file {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn parse_metrics(spec: &str) -> Result<Vec<Metric>> {
    spec.split(',')
        .map(|name| name.trim().parse())
        .collect::<Result<Vec<Metric>>>()
}

fn parse_history(spec: &str) -> Result<Vec<(usize, f64, f64)>> {
    spec.split(',')
        .map(|tok| {
            let item: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad history item id {tok:?}")))?;
            Ok((item, 1.0, 1.0))
        })
        .collect()
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = Overlay::load(args.config.as_deref())?;
    let data_path = require_file(cfg.resolve_opt(args.data, "data")?, "data")?;
    let dataset = Dataset::load_tsv(&data_path)?;

    let solver: Solver = cfg
        .resolve(args.solver, "solver", "ials".to_string())?
        .parse()?;
    let default_epochs = match solver {
        Solver::Ials | Solver::IalsPairwise => 16,
        Solver::SgdGramian => 32,
        _ => 10,
    };
    let default_loss = match solver {
        Solver::SgdPairwise => "logistic",
        _ => "square",
    };

    let dims = cfg.resolve(args.dims, "dims", 16)?;
    let sigma = cfg.resolve(args.sigma, "sigma", FactorModel::default_sigma(dims))?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let epochs = cfg.resolve(args.epochs, "epochs", default_epochs)?;
    let learning_rate = cfg.resolve(args.learning_rate, "learning_rate", 0.05)?;
    let alpha0 = cfg.resolve(args.alpha0, "alpha0", 0.1)?;
    let lambda = cfg.resolve(args.lambda, "lambda", 0.1)?;
    let nu = cfg.resolve(args.nu, "nu", 1.0)?;
    let loss: LossKind = cfg
        .resolve(args.loss, "loss", default_loss.to_string())?
        .parse()?;
    let sampler_kind: SamplerKind = cfg
        .resolve(args.sampler, "sampler", "uniform".to_string())?
        .parse()?;
    let sampler = SamplerConfig {
        kind: sampler_kind,
        m: cfg.resolve(args.m, "m", 1)?,
        beta: cfg.resolve(args.beta, "beta", 1.0)?,
        gamma_adaptive: cfg.resolve(args.gamma_adaptive, "gamma_adaptive", 10.0)?,
        warp_max_trials: cfg.resolve_opt(args.warp_max_trials, "warp_max_trials")?,
        warp_margin: cfg.resolve(args.warp_margin, "warp_margin", 1.0)?,
        warp_printed_rank: cfg.resolve(args.warp_printed_rank, "warp_printed_rank", false)?,
        first_stage_size: cfg.resolve(args.first_stage_size, "first_stage_size", 32)?,
        lambda0: cfg.resolve(args.lambda0, "lambda0", 1.0)?,
    };
    let weighting = match cfg
        .resolve(args.weighting, "weighting", "constant".to_string())?
        .to_ascii_lowercase()
        .replace('_', "-")
        .as_str()
    {
        "constant" => Weighting::Constant,
        "lambda-rank" => Weighting::LambdaRank {
            metric: cfg
                .resolve(args.weight_metric, "weight_metric", "ndcg".to_string())?
                .parse()?,
            n: cfg.resolve(args.weight_n, "weight_n", 10)?,
        },
        "warp-penalty" => Weighting::WarpPenalty,
        other => {
            return Err(Error::invalid(format!(
                "unknown weighting {other:?} (expected constant, lambda-rank or warp-penalty)"
            )))
        }
    };
    let train_config = TrainConfig {
        learning_rate,
        epochs,
        seed,
        batch_size: cfg.resolve(args.batch_size, "batch_size", 16)?,
        refresh_every: cfg.resolve(args.refresh_every, "refresh_every", 1024)?,
        weighting,
        loss: LossConfig {
            kind: loss,
            alpha0,
            lambda,
            nu,
        },
        sampler,
    };
    let als_config = AlsConfig {
        alpha0,
        lambda,
        epochs,
        threads: cfg.resolve(args.threads, "threads", 1)?,
    };
    let gramian_config = SgdGramianConfig {
        learning_rate,
        estimate_rate: cfg.resolve(args.estimate_rate, "estimate_rate", 0.02)?,
        alpha0,
        lambda,
        epochs,
        seed,
        exact_init: cfg.resolve(args.exact_init, "exact_init", true)?,
    };
    let model_in = cfg.resolve_opt(args.model_in, "model_in")?;
    let model_out = cfg.resolve_opt(args.model_out, "model_out")?;
    cfg.finish()?;

    let mut model = match model_in {
        Some(path) => {
            let model = FactorModel::load(&path)?;
            if model.num_contexts() < dataset.num_contexts()
                || model.num_items() < dataset.num_items()
            {
                return Err(Error::invalid(format!(
                    "model {} covers {}x{} but the data needs {}x{}",
                    path.display(),
                    model.num_contexts(),
                    model.num_items(),
                    dataset.num_contexts(),
                    dataset.num_items()
                )));
            }
            model
        }
        None => FactorModel::init(
            dataset.num_contexts(),
            dataset.num_items(),
            dims,
            seed,
            sigma,
        )?,
    };

    let start = Instant::now();
    let on_epoch = |epoch: usize, loss: f64| {
        println!("{epoch}\t{loss:.6}\t{}", start.elapsed().as_millis());
    };
    match solver {
        Solver::SgdPointwise => train_sgd(
            &mut model,
            &dataset,
            SgdObjective::Pointwise,
            &train_config,
            on_epoch,
        )?,
        Solver::SgdPairwise => train_sgd(
            &mut model,
            &dataset,
            SgdObjective::Pairwise,
            &train_config,
            on_epoch,
        )?,
        Solver::SgdSsm => train_sgd(
            &mut model,
            &dataset,
            SgdObjective::SampledSoftmax,
            &train_config,
            on_epoch,
        )?,
        Solver::Ials => train_ials(&mut model, &dataset, &als_config, on_epoch)?,
        Solver::IalsPairwise => train_ials_pairwise(&mut model, &dataset, &als_config, on_epoch)?,
        Solver::SgdGramian => train_sgd_gramian(&mut model, &dataset, &gramian_config, on_epoch)?,
    }

    if let Some(path) = model_out {
        model.save(&path)?;
    }
    Ok(())
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = Overlay::load(args.config.as_deref())?;
    let model_path = require_file(cfg.resolve_opt(args.model, "model")?, "model")?;
    let data_path = require_file(cfg.resolve_opt(args.data, "data")?, "data")?;
    let split = cfg.resolve_opt(args.split, "split")?;
    let k = cfg.resolve(args.k, "k", 1)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let metrics = parse_metrics(&cfg.resolve(
        args.metrics,
        "metrics",
        "prec,recall,ap,ndcg,auc".to_string(),
    )?)?;
    let n = cfg.resolve(args.n, "n", 10)?;
    let filter_train = cfg.resolve_switch(args.filter_train, "filter_train")?;
    let csv = cfg.resolve_switch(args.csv, "csv")?;
    let train_path = cfg.resolve_opt(args.train, "train")?;
    cfg.finish()?;

    let model = FactorModel::load(&model_path)?;
    let data = Dataset::load_tsv(&data_path)?;
    let (train, test) = match split.as_deref() {
        None => {
            let train = match &train_path {
                Some(path) => Dataset::load_tsv(path)?,
                None => {
                    if filter_train {
                        return Err(Error::invalid(
                            "--filter-train needs --train or --split leave-k-out",
                        ));
                    }
                    data.clone()
                }
            };
            (train, data)
        }
        Some("leave-k-out") => data.leave_k_out_split(k, seed)?,
        Some(other) => {
            return Err(Error::invalid(format!(
                "unknown split {other:?} (expected leave-k-out)"
            )))
        }
    };
    if model.num_items() < test.num_items() || model.num_contexts() < test.num_contexts() {
        return Err(Error::invalid(format!(
            "model covers {}x{} but the data needs {}x{}",
            model.num_contexts(),
            model.num_items(),
            test.num_contexts(),
            test.num_items()
        )));
    }
    let report = evaluate_model(&model, &train, &test, &metrics, n, filter_train)?;
    if csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

pub fn cmd_recommend(args: RecommendArgs) -> Result<()> {
    let mut cfg = Overlay::load(args.config.as_deref())?;
    let model_path = require_file(cfg.resolve_opt(args.model, "model")?, "model")?;
    let context = cfg.resolve_opt(args.context, "context")?;
    let history = cfg.resolve_opt(args.history, "history")?;
    let data_path = cfg.resolve_opt(args.data, "data")?;
    let n = cfg.resolve(args.n, "n", 10)?;
    let exclude_seen = cfg.resolve_switch(args.exclude_seen, "exclude_seen")?;
    let alpha0 = cfg.resolve(args.alpha0, "alpha0", 0.1)?;
    let lambda = cfg.resolve(args.lambda, "lambda", 0.1)?;
    cfg.finish()?;

    let model = FactorModel::load(&model_path)?;
    let n = n.min(model.num_items());

    let ranked: Vec<(usize, f64)> = match (&history, context) {
        (Some(spec), _) => {
            let history = parse_history(spec)?;
            let excluded: HashSet<usize> = if exclude_seen {
                history.iter().map(|&(item, _, _)| item).collect()
            } else {
                HashSet::new()
            };
            let gram_item = compute_gramians(&model, None).gram_item;
            let embedding = model.fold_in_context(&history, alpha0, lambda, &gram_item)?;
            let mut scored: Vec<(usize, f64)> = (0..model.num_items())
                .filter(|item| !excluded.contains(item))
                .map(|item| (item, model.score_with(&embedding, item)))
                .collect();
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            scored.truncate(n);
            scored
        }
        (None, Some(c)) => {
            if c >= model.num_contexts() {
                return Err(Error::invalid(format!(
                    "context {c} out of range (model has {})",
                    model.num_contexts()
                )));
            }
            let excluded: HashSet<usize> = if exclude_seen {
                let path = require_file(data_path, "data")
                    .map_err(|_| Error::invalid("--exclude-seen with --context needs --data"))?;
                Dataset::load_tsv(&path)?.items_of(c).into_iter().collect()
            } else {
                HashSet::new()
            };
            let list = model.top_n(c, n, &excluded)?;
            list.items.into_iter().zip(list.scores).collect()
        }
        (None, None) => {
            return Err(Error::invalid(
                "recommend needs --context or --history i1,i2,...",
            ))
        }
    };

    for (rank, (item, score)) in ranked.iter().enumerate() {
        println!("{}\t{item}\t{score:.6}", rank + 1);
    }
    Ok(())
}

/// Dispatch a parsed command line; the binary maps the error onto the
/// exit-code contract.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Recommend(args) => cmd_recommend(args),
    }
}
