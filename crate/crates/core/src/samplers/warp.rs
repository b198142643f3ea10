//! WARP rejection sampling: draw uniform candidates until one violates
//! the margin, and turn the number of trials into a rank estimate whose
//! penalty weights the gradient step.

use rand::Rng;

use crate::model::FactorModel;

use super::{uniform_sample, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpOutcome {
    /// Accepted negative, or None if the trial budget was exhausted.
    pub negative: Option<usize>,
    pub trials: usize,
    pub rank_estimate: usize,
}

/// Rejection-sample a negative j with score(c,j) + margin > score(c,i).
/// The trial count estimates the rank of the positive item.
pub fn warp_sample(
    rng: &mut impl Rng,
    model: &FactorModel,
    c: usize,
    i: usize,
    config: &SamplerConfig,
) -> WarpOutcome {
    let num_items = model.num_items();
    let max_trials = config.warp_max_trials.unwrap_or(num_items).max(1);
    let positive_score = model.score(c, i);
    if num_items < 2 {
        return WarpOutcome {
            negative: None,
            trials: 0,
            rank_estimate: 0,
        };
    }
    let mut trials = 0;
    while trials < max_trials {
        let j = uniform_sample(rng, num_items);
        // The positive itself is not a candidate; redrawing keeps the
        // trial count a count of actual negatives inspected.
        if j == i {
            continue;
        }
        trials += 1;
        if model.score(c, j) + config.warp_margin > positive_score {
            let rank_estimate = if config.warp_printed_rank {
                // The literal printed formula floor((#rounds - 1)/|I|);
                // it collapses to 0 for every trial count <= |I|.
                (trials - 1) / num_items
            } else {
                (num_items - 1) / trials
            };
            return WarpOutcome {
                negative: Some(j),
                trials,
                rank_estimate,
            };
        }
    }
    WarpOutcome {
        negative: None,
        trials: max_trials,
        rank_estimate: 0,
    }
}

/// Rank penalty gamma(k) = sum_{l=1..k} 1/l, with gamma(0) := 1 so that
/// first-trial acceptances still carry weight.
pub fn warp_penalty(rank_estimate: usize) -> f64 {
    if rank_estimate == 0 {
        return 1.0;
    }
    (1..=rank_estimate).map(|l| 1.0 / l as f64).sum()
}
