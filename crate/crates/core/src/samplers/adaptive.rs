//! Rank-based adaptive sampling: draw an embedding dimension weighted by
//! |w_{c,f}| * sigma_f, draw a desired rank from a truncated exponential
//! law, and return the item at that rank in the per-dimension sorted
//! order.

use rand::Rng;

use crate::model::FactorModel;

use super::{sample_truncated_exp_rank, truncated_exp_rank_pmf, uniform_sample, SamplerConfig};

/// Per-dimension sorted item lists plus the item-embedding standard
/// deviations. Rebuilt occasionally from a frozen model; immutable
/// afterwards.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    /// For each dimension f: item ids sorted by h_{., f} descending,
    /// ties broken by ascending id.
    pub sorted_items: Vec<Vec<usize>>,
    /// Population standard deviation of each embedding column of H.
    pub sigma: Vec<f64>,
    /// Draws since the state was built.
    pub stale_counter: usize,
}

pub fn rebuild_adaptive_state(model: &FactorModel) -> AdaptiveState {
    let d = model.dim();
    let n = model.num_items();
    let mut sorted_items = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    for f in 0..d {
        let column: Vec<f64> = (0..n).map(|i| model.item_embedding(i)[f]).collect();
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        sigma.push(var.sqrt());

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            column[b]
                .partial_cmp(&column[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        sorted_items.push(order);
    }
    AdaptiveState {
        sorted_items,
        sigma,
        stale_counter: 0,
    }
}

fn dimension_weights(model: &FactorModel, c: usize, state: &AdaptiveState) -> Vec<f64> {
    model
        .context_embedding(c)
        .iter()
        .zip(&state.sigma)
        .map(|(w, s)| w.abs() * s)
        .collect()
}

/// Draw one item approximately proportional to exp(-rank(j|c)/gamma).
/// Falls back to a uniform draw when every dimension weight is zero.
pub fn adaptive_rank_sample(
    rng: &mut impl Rng,
    model: &FactorModel,
    c: usize,
    state: &AdaptiveState,
    config: &SamplerConfig,
) -> usize {
    let n = model.num_items();
    let weights = dimension_weights(model, c, state);
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return uniform_sample(rng, n);
    }
    let mut u: f64 = rng.random_range(0.0..total);
    let mut dim = weights.len() - 1;
    for (f, &w) in weights.iter().enumerate() {
        if u < w {
            dim = f;
            break;
        }
        u -= w;
    }
    let rank = sample_truncated_exp_rank(rng, config.gamma_adaptive, n);
    if model.context_embedding(c)[dim] > 0.0 {
        state.sorted_items[dim][rank - 1]
    } else {
        // r-th smallest: count from the tail of the descending order.
        state.sorted_items[dim][n - rank]
    }
}

/// The exact induced item distribution (mixture over dimension and rank
/// draws), by enumeration. Desk scale only.
pub fn adaptive_exact_prob(
    model: &FactorModel,
    c: usize,
    state: &AdaptiveState,
    config: &SamplerConfig,
) -> Vec<f64> {
    let n = model.num_items();
    let weights = dimension_weights(model, c, state);
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let rank_pmf = truncated_exp_rank_pmf(config.gamma_adaptive, n);
    let mut probs = vec![0.0; n];
    for (f, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let q_f = w / total;
        let positive = model.context_embedding(c)[f] > 0.0;
        for (rank_idx, &p_r) in rank_pmf.iter().enumerate() {
            let item = if positive {
                state.sorted_items[f][rank_idx]
            } else {
                state.sorted_items[f][n - rank_idx - 1]
            };
            probs[item] += q_f * p_r;
        }
    }
    probs
}
