//! Implicit-feedback observation sets: TSV ingestion, context-major and
//! item-major adjacency, popularity tables and leave-k-out splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One observed (context, item) pair with its label and confidence weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub context: usize,
    pub item: usize,
    pub label: f64,
    pub weight: f64,
}

/// The observation set held in both context-major and item-major form.
/// Immutable after construction; safe to share across readers.
#[derive(Debug, Clone)]
pub struct Dataset {
    num_contexts: usize,
    num_items: usize,
    interactions: Vec<Interaction>,
    /// Indices into `interactions`, grouped by context.
    by_context: Vec<Vec<usize>>,
    /// Indices into `interactions`, grouped by item.
    by_item: Vec<Vec<usize>>,
}

impl Dataset {
    /// Build a dataset from raw interactions. Duplicate (c,i) pairs are
    /// collapsed: weights are summed and labels averaged weighted by weight.
    pub fn from_interactions(
        num_contexts: usize,
        num_items: usize,
        raw: impl IntoIterator<Item = Interaction>,
    ) -> Result<Self> {
        let mut merged: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
        for it in raw {
            if it.context >= num_contexts || it.item >= num_items {
                return Err(Error::invalid(format!(
                    "id out of range: ({}, {}) with declared dims {} x {}",
                    it.context, it.item, num_contexts, num_items
                )));
            }
            if it.weight < 0.0 {
                return Err(Error::invalid(format!(
                    "negative weight {} for pair ({}, {})",
                    it.weight, it.context, it.item
                )));
            }
            if !it.label.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite label for pair ({}, {})",
                    it.context, it.item
                )));
            }
            let entry = merged.entry((it.context, it.item)).or_insert((0.0, 0.0));
            entry.0 += it.weight;
            entry.1 += it.weight * it.label;
        }
        let mut interactions: Vec<Interaction> = merged
            .into_iter()
            .map(|((c, i), (w, wl))| Interaction {
                context: c,
                item: i,
                label: if w > 0.0 { wl / w } else { 1.0 },
                weight: w,
            })
            .collect();
        interactions.sort_by_key(|it| (it.context, it.item));

        let mut by_context = vec![Vec::new(); num_contexts];
        let mut by_item = vec![Vec::new(); num_items];
        for (idx, it) in interactions.iter().enumerate() {
            by_context[it.context].push(idx);
            by_item[it.item].push(idx);
        }
        Ok(Dataset {
            num_contexts,
            num_items,
            interactions,
            by_context,
            by_item,
        })
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Interactions of one context, in ascending item order.
    pub fn context_interactions(&self, c: usize) -> impl Iterator<Item = &Interaction> + '_ {
        self.by_context[c]
            .iter()
            .map(move |&idx| &self.interactions[idx])
    }

    /// Interactions of one item, in ascending context order.
    pub fn item_interactions(&self, i: usize) -> impl Iterator<Item = &Interaction> + '_ {
        self.by_item[i]
            .iter()
            .map(move |&idx| &self.interactions[idx])
    }

    /// Item ids selected in context `c` (the set I_c).
    pub fn items_of(&self, c: usize) -> Vec<usize> {
        self.context_interactions(c).map(|it| it.item).collect()
    }

    /// |I_c|
    pub fn context_degree(&self, c: usize) -> usize {
        self.by_context[c].len()
    }

    /// |C_i|
    pub fn item_degree(&self, i: usize) -> usize {
        self.by_item[i].len()
    }

    pub fn contains(&self, c: usize, i: usize) -> bool {
        self.by_context[c]
            .binary_search_by_key(&i, |&idx| self.interactions[idx].item)
            .is_ok()
    }

    /// Per-item interaction counts |C_i|.
    pub fn item_counts(&self) -> Vec<usize> {
        self.by_item.iter().map(Vec::len).collect()
    }

    /// Load interactions from a TSV file. Each non-comment line is
    /// `context<TAB>item[<TAB>label[<TAB>weight]]`; an optional first
    /// directive `#dims <|C|> <|I|>` fixes the dimensions, otherwise
    /// they are 1 + the maximum observed id.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        Self::parse_tsv(BufReader::new(file))
    }

    pub fn parse_tsv(reader: impl BufRead) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        let mut raw = Vec::new();
        let mut max_c = 0usize;
        let mut max_i = 0usize;

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("#dims") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "#dims directive requires two integers".into(),
                    });
                }
                let nc = parts[0].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad context count {:?}", parts[0]),
                })?;
                let ni = parts[1].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad item count {:?}", parts[1]),
                })?;
                dims = Some((nc, ni));
                continue;
            }
            if trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() < 2 || fields.len() > 4 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 2-4 tab-separated fields, got {}", fields.len()),
                });
            }
            let context: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad context id {:?}", fields[0]),
            })?;
            let item: usize = fields[1].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad item id {:?}", fields[1]),
            })?;
            let label: f64 = match fields.get(2) {
                Some(s) => s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad label {s:?}"),
                })?,
                None => 1.0,
            };
            let weight: f64 = match fields.get(3) {
                Some(s) => s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad weight {s:?}"),
                })?,
                None => 1.0,
            };
            max_c = max_c.max(context);
            max_i = max_i.max(item);
            raw.push(Interaction {
                context,
                item,
                label,
                weight,
            });
        }

        let (num_contexts, num_items) = match dims {
            Some(d) => d,
            None if raw.is_empty() => (0, 0),
            None => (max_c + 1, max_i + 1),
        };
        Self::from_interactions(num_contexts, num_items, raw)
    }

    /// Move exactly `k` uniformly chosen interactions of every context
    /// with more than `k` interactions into the test set. Deterministic
    /// given `seed`.
    pub fn leave_k_out_split(&self, k: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if k == 0 {
            return Err(Error::invalid("leave-k-out requires k >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_contexts {
            let idxs = &self.by_context[c];
            if idxs.len() <= k {
                train.extend(idxs.iter().map(|&i| self.interactions[i]));
                continue;
            }
            let mut chosen: Vec<usize> = (0..idxs.len()).collect();
            chosen.shuffle(&mut rng);
            let (held, kept) = chosen.split_at(k);
            for &p in held {
                test.push(self.interactions[idxs[p]]);
            }
            for &p in kept {
                train.push(self.interactions[idxs[p]]);
            }
        }
        Ok((
            Dataset::from_interactions(self.num_contexts, self.num_items, train)?,
            Dataset::from_interactions(self.num_contexts, self.num_items, test)?,
        ))
    }

    /// Popularity distribution probs[i] = counts[i]^beta / sum_j counts[j]^beta.
    pub fn popularity_distribution(&self, beta: f64) -> Result<PopularityTable> {
        if self.is_empty() {
            return Err(Error::invalid(
                "popularity distribution over an empty dataset",
            ));
        }
        PopularityTable::from_counts(self.item_counts(), beta)
    }
}

/// Item popularity raised to a squashing exponent and normalized.
#[derive(Debug, Clone)]
pub struct PopularityTable {
    counts: Vec<usize>,
    beta: f64,
    probs: Vec<f64>,
    /// Cumulative distribution, for inverse-CDF sampling.
    cdf: Vec<f64>,
}

impl PopularityTable {
    pub fn from_counts(counts: Vec<usize>, beta: f64) -> Result<Self> {
        if beta < 0.0 {
            return Err(Error::invalid("popularity beta must be >= 0"));
        }
        // 0^beta := 0 for beta > 0 and 0^0 := 1.
        let raw: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if c == 0 && beta > 0.0 {
                    0.0
                } else {
                    (c as f64).powf(beta)
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "all item counts are zero; no valid popularity distribution",
            ));
        }
        let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(PopularityTable {
            counts,
            beta,
            probs,
            cdf,
        })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, item: usize) -> f64 {
        self.probs[item]
    }

    pub fn num_items(&self) -> usize {
        self.probs.len()
    }

    pub(crate) fn cdf(&self) -> &[f64] {
        &self.cdf
    }
}
