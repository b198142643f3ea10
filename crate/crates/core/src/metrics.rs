//! Exact ranking metrics over the ranks of relevant items, plus the
//! held-out evaluation harness.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::FactorModel;

/// The 1-based ranks of the relevant items of one context, together
/// with the size of the candidate set they were ranked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankSet {
    ranks: Vec<usize>,
    catalog_size: usize,
}

impl RankSet {
    pub fn new(mut ranks: Vec<usize>, catalog_size: usize) -> Result<Self> {
        ranks.sort_unstable();
        ranks.dedup();
        if ranks.is_empty() {
            return Err(Error::invalid("rank set must not be empty"));
        }
        if ranks.iter().any(|&r| r == 0 || r > catalog_size) {
            return Err(Error::invalid(format!(
                "ranks must lie in 1..={catalog_size}"
            )));
        }
        Ok(RankSet {
            ranks,
            catalog_size,
        })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn catalog_size(&self) -> usize {
        self.catalog_size
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    fn hits_at(&self, n: usize) -> usize {
        self.ranks.iter().filter(|&&r| r <= n).count()
    }
}

/// Metric selector. Parses from `prec`, `recall`, `ap`, `ndcg`, `auc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Precision,
    Recall,
    AveragePrecision,
    Ndcg,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Precision,
        Metric::Recall,
        Metric::AveragePrecision,
        Metric::Ndcg,
        Metric::Auc,
    ];

    pub fn evaluate(&self, r: &RankSet, n: usize) -> Result<f64> {
        match self {
            Metric::Precision => precision_at(r, n),
            Metric::Recall => recall_at(r, n),
            Metric::AveragePrecision => average_precision_at(r, n),
            Metric::Ndcg => ndcg_at(r, n),
            Metric::Auc => auc(r),
        }
    }

    /// Per-rank point value used by metric-difference pair weighting:
    /// the contribution a relevant item at `rank` makes to the metric.
    pub fn point(&self, rank: usize, n: usize, catalog_size: usize) -> f64 {
        match self {
            Metric::Precision => {
                if rank <= n {
                    1.0 / n as f64
                } else {
                    0.0
                }
            }
            Metric::Recall => {
                if rank <= n {
                    1.0
                } else {
                    0.0
                }
            }
            Metric::AveragePrecision => {
                if rank <= n {
                    1.0 / rank as f64
                } else {
                    0.0
                }
            }
            Metric::Ndcg => {
                if rank <= n {
                    1.0 / ((rank + 1) as f64).log2()
                } else {
                    0.0
                }
            }
            // Linear decay over the catalog.
            Metric::Auc => {
                if catalog_size <= 1 {
                    0.0
                } else {
                    (catalog_size - rank) as f64 / (catalog_size - 1) as f64
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::Precision => "prec",
            Metric::Recall => "recall",
            Metric::AveragePrecision => "ap",
            Metric::Ndcg => "ndcg",
            Metric::Auc => "auc",
        };
        f.write_str(name)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prec" | "precision" => Ok(Metric::Precision),
            "recall" => Ok(Metric::Recall),
            "ap" | "map" => Ok(Metric::AveragePrecision),
            "ndcg" => Ok(Metric::Ndcg),
            "auc" => Ok(Metric::Auc),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn precision_at(r: &RankSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("precision window must be >= 1"));
    }
    Ok(r.hits_at(n) as f64 / n as f64)
}

pub fn recall_at(r: &RankSet, n: usize) -> Result<f64> {
    Ok(r.hits_at(n) as f64 / r.len() as f64)
}

pub fn average_precision_at(r: &RankSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("AP window must be >= 1"));
    }
    let mut sum = 0.0;
    let mut hits = 0usize;
    for i in 1..=n {
        if r.ranks.binary_search(&i).is_ok() {
            hits += 1;
            sum += hits as f64 / i as f64;
        }
    }
    Ok(sum / r.len().min(n) as f64)
}

pub fn ndcg_at(r: &RankSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("NDCG window must be >= 1"));
    }
    let gain: f64 = r
        .ranks
        .iter()
        .filter(|&&rank| rank <= n)
        .map(|&rank| 1.0 / ((rank + 1) as f64).log2())
        .sum();
    let ideal: f64 = (1..=r.len().min(n))
        .map(|i| 1.0 / ((i + 1) as f64).log2())
        .sum();
    Ok(gain / ideal)
}

pub fn auc(r: &RankSet) -> Result<f64> {
    let relevant = r.len();
    let catalog = r.catalog_size();
    if relevant >= catalog {
        return Err(Error::invalid(
            "AUC undefined when every candidate is relevant",
        ));
    }
    // Pairs (r, r') with r relevant, r' an irrelevant rank, r < r'.
    // For relevant rank r there are (catalog - r) ranks above it, of
    // which (relevant ranked after r) are relevant.
    let mut correct = 0usize;
    for (pos, &rank) in r.ranks.iter().enumerate() {
        let below = catalog - rank;
        let relevant_below = relevant - pos - 1;
        correct += below - relevant_below;
    }
    Ok(correct as f64 / (relevant * (catalog - relevant)) as f64)
}

/// Ranks of the relevant items of a context, against the non-excluded
/// catalog.
pub fn ranks_of_relevant(
    model: &FactorModel,
    c: usize,
    relevant: &HashSet<usize>,
    excluded: &HashSet<usize>,
) -> Result<RankSet> {
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set must not be empty"));
    }
    if relevant.iter().any(|i| excluded.contains(i)) {
        return Err(Error::invalid(
            "relevant and excluded sets must be disjoint",
        ));
    }
    let ranks: Vec<usize> = relevant
        .iter()
        .map(|&i| model.rank_of(c, i, excluded))
        .collect::<Result<_>>()?;
    RankSet::new(ranks, model.num_items() - excluded.len())
}

/// Mean metric values over evaluated contexts.
#[derive(Debug, Clone)]
pub struct MetricReport {
    values: BTreeMap<String, f64>,
    pub contexts_evaluated: usize,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// `metric<TAB>value` lines.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, value) in self.entries() {
            out.push_str(&format!("{name}\t{value:.6}\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in self.entries() {
            out.push_str(&format!("{name},{value:.6}\n"));
        }
        out
    }
}

/// Evaluate a model on a held-out split: per test context the relevant
/// set is its test items; train positives are excluded from the candidate
/// catalog when `filter_train` is set. Metrics are macro-averaged
/// uniformly over contexts with non-empty relevant sets, in context-id
/// order.
pub fn evaluate_model(
    model: &FactorModel,
    train: &Dataset,
    test: &Dataset,
    metrics: &[Metric],
    n: usize,
    filter_train: bool,
) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut sums: Vec<f64> = vec![0.0; metrics.len()];
    let mut evaluated = 0usize;
    for c in 0..test.num_contexts() {
        let relevant: HashSet<usize> = test.items_of(c).into_iter().collect();
        if relevant.is_empty() {
            continue;
        }
        let excluded: HashSet<usize> = if filter_train {
            train.items_of(c).into_iter().collect()
        } else {
            HashSet::new()
        };
        let rank_set = ranks_of_relevant(model, c, &relevant, &excluded)?;
        for (slot, metric) in sums.iter_mut().zip(metrics) {
            *slot += metric.evaluate(&rank_set, n)?;
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::invalid(
            "no test context has a non-empty relevant set",
        ));
    }
    let mut values = BTreeMap::new();
    for (metric, sum) in metrics.iter().zip(&sums) {
        let name = match metric {
            Metric::Auc => metric.to_string(),
            _ => format!("{metric}@{n}"),
        };
        values.insert(name, sum / evaluated as f64);
    }
    Ok(MetricReport {
        values,
        contexts_evaluated: evaluated,
    })
}
