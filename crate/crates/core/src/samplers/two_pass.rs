//! Two-pass sampling: a cheap first stage draws M distinct candidates
//! from the popularity distribution, a second stage scores them and
//! keeps the m highest-scoring ones. The reported proposal probability
//! is the first-stage one; the top-m filter is treated as part of the
//! sampler's hardness schedule rather than corrected for.

use std::collections::HashSet;

use rand::Rng;

use crate::dataset::PopularityTable;
use crate::error::{Error, Result};
use crate::model::FactorModel;

use super::{popularity_sample, SamplerConfig};

/// Draw `config.m` negatives for context `c`. Returns (item, q) pairs
/// where q is the first-stage popularity probability, sorted by
/// descending score with ties broken by ascending item id.
pub fn two_pass_sample(
    rng: &mut impl Rng,
    model: &FactorModel,
    table: &PopularityTable,
    c: usize,
    config: &SamplerConfig,
) -> Result<Vec<(usize, f64)>> {
    let capital_m = config.first_stage_size;
    let m = config.m;
    if m == 0 || capital_m < m {
        return Err(Error::invalid(format!(
            "two-pass sampler needs 1 <= m <= M, got m={m}, M={capital_m}"
        )));
    }
    let supported = (0..model.num_items())
        .filter(|&j| table.prob(j) > 0.0)
        .count();
    if capital_m > supported {
        return Err(Error::invalid(format!(
            "first stage asks for {capital_m} distinct items but only {supported} \
             have positive popularity mass"
        )));
    }

    // Stage 1: M distinct popularity draws, by rejecting repeats.
    let mut seen = HashSet::with_capacity(capital_m);
    let mut candidates = Vec::with_capacity(capital_m);
    while candidates.len() < capital_m {
        let j = popularity_sample(rng, table);
        if seen.insert(j) {
            candidates.push(j);
        }
    }

    // Stage 2: keep the m highest-scoring candidates.
    candidates.sort_by(|&a, &b| {
        model
            .score(c, b)
            .partial_cmp(&model.score(c, a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    candidates.truncate(m);
    Ok(candidates.into_iter().map(|j| (j, table.prob(j))).collect())
}
