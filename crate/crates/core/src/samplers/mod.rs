//! Negative-sampling distributions q(j|c) and the corrected sampled
//! softmax loss. Each sampler that admits a tractable exact distribution
//! also exposes it, so draws can be tested against the target.

mod adaptive;
mod kernel;
mod two_pass;
mod warp;

pub use adaptive::{
    adaptive_exact_prob, adaptive_rank_sample, rebuild_adaptive_state, AdaptiveState,
};
pub use kernel::{build_kernel_tree, kernel_exact_prob, kernel_sample, KernelTree};
pub use two_pass::two_pass_sample;
pub use warp::{warp_penalty, warp_sample, WarpOutcome};

use rand::Rng;

use crate::dataset::PopularityTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Uniform,
    Popularity,
    InBatch,
    Warp,
    Adaptive,
    Kernel,
    TwoPass,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(SamplerKind::Uniform),
            "popularity" => Ok(SamplerKind::Popularity),
            "in_batch" => Ok(SamplerKind::InBatch),
            "warp" => Ok(SamplerKind::Warp),
            "adaptive" => Ok(SamplerKind::Adaptive),
            "kernel" => Ok(SamplerKind::Kernel),
            "two_pass" => Ok(SamplerKind::TwoPass),
            other => Err(Error::invalid(format!("unknown sampler kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Negatives per positive.
    pub m: usize,
    /// Popularity squashing exponent.
    pub beta: f64,
    /// Rank temperature of the adaptive sampler, q(r) ~ exp(-r/gamma).
    pub gamma_adaptive: f64,
    /// Rejection budget of the WARP sampler; defaults to |I| when unset.
    pub warp_max_trials: Option<usize>,
    /// WARP acceptance margin.
    pub warp_margin: f64,
    /// Keep the literal printed WARP rank formula instead of the
    /// corrected one (fidelity experiments only).
    pub warp_printed_rank: bool,
    /// First-stage sample size M of the two-pass sampler.
    pub first_stage_size: usize,
    /// Additive constant of the quadratic kernel map.
    pub lambda0: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Uniform,
            m: 1,
            beta: 1.0,
            gamma_adaptive: 10.0,
            warp_max_trials: None,
            warp_margin: 1.0,
            warp_printed_rank: false,
            first_stage_size: 32,
            lambda0: 1.0,
        }
    }
}

/// q(j|c) ~ 1.
pub fn uniform_sample(rng: &mut impl Rng, num_items: usize) -> usize {
    rng.random_range(0..num_items)
}

/// q(j|c) ~ |C_j|^beta, drawn by inverse-CDF search over the table.
pub fn popularity_sample(rng: &mut impl Rng, table: &PopularityTable) -> usize {
    let u: f64 = rng.random();
    let cdf = table.cdf();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// In-batch negatives: example k receives the positive items of every
/// other example in the batch.
pub fn in_batch_negatives(batch: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    if batch.len() < 2 {
        return Err(Error::invalid("in-batch negatives need a batch of >= 2"));
    }
    Ok((0..batch.len())
        .map(|k| {
            batch
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != k)
                .map(|(_, &(_, item))| item)
                .collect()
        })
        .collect())
}

/// Corrected sampled softmax loss for one positive and m sampled
/// negatives: -y^_i + ln(exp(y^_i) + sum exp(y^_j - ln(m q_j))),
/// evaluated in log space.
pub fn sampled_softmax_loss(
    positive_score: f64,
    negative_scores: &[f64],
    q_probs: &[f64],
    m: usize,
) -> Result<f64> {
    if negative_scores.len() != m || q_probs.len() != m {
        return Err(Error::invalid(format!(
            "expected {m} negatives and probabilities, got {} and {}",
            negative_scores.len(),
            q_probs.len()
        )));
    }
    let mut logits = Vec::with_capacity(m + 1);
    logits.push(positive_score);
    for (&s, &q) in negative_scores.iter().zip(q_probs) {
        if q <= 0.0 {
            return Err(Error::invalid(format!(
                "sampling probability {q} must be > 0"
            )));
        }
        logits.push(s - (m as f64 * q).ln());
    }
    Ok(-positive_score + crate::losses::log_sum_exp(&logits))
}

/// Corrected-softmax weights over {positive, negatives}: the softmax of
/// the corrected logits, used by the sampled-softmax gradient.
pub fn sampled_softmax_weights(
    positive_score: f64,
    negative_scores: &[f64],
    q_probs: &[f64],
    m: usize,
) -> Result<Vec<f64>> {
    let mut logits = Vec::with_capacity(m + 1);
    logits.push(positive_score);
    for (&s, &q) in negative_scores.iter().zip(q_probs) {
        if q <= 0.0 {
            return Err(Error::invalid(format!(
                "sampling probability {q} must be > 0"
            )));
        }
        logits.push(s - (m as f64 * q).ln());
    }
    let lse = crate::losses::log_sum_exp(&logits);
    Ok(logits.iter().map(|l| (l - lse).exp()).collect())
}

/// Inverse-CDF draw of a rank r in {1..n} with p(r) ~ exp(-r/gamma).
/// Falls back to uniform when the distribution is numerically flat.
pub(crate) fn sample_truncated_exp_rank(rng: &mut impl Rng, gamma: f64, n: usize) -> usize {
    debug_assert!(n >= 1);
    let rho = (-1.0 / gamma).exp();
    if !(rho < 1.0 - 1e-12) {
        return rng.random_range(1..=n);
    }
    let u: f64 = rng.random();
    // CDF(r) = (1 - rho^r) / (1 - rho^n); invert for r.
    let r = ((1.0 - u * (1.0 - rho.powi(n as i32))).ln() / rho.ln()).ceil() as usize;
    r.clamp(1, n)
}

/// pmf of the truncated rank distribution, for tests.
pub(crate) fn truncated_exp_rank_pmf(gamma: f64, n: usize) -> Vec<f64> {
    let rho = (-1.0 / gamma).exp();
    if !(rho < 1.0 - 1e-12) {
        return vec![1.0 / n as f64; n];
    }
    let raw: Vec<f64> = (1..=n).map(|r| rho.powi(r as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Chi-square goodness-of-fit p-value for observed counts against
    /// expected probabilities; bins with negligible mass are pooled.
    pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n: u64 = counts.iter().sum();
        let mut stat = 0.0;
        let mut dof: i64 = -1;
        let mut pooled_count = 0.0;
        let mut pooled_prob = 0.0;
        for (&c, &p) in counts.iter().zip(probs) {
            let expected = p * n as f64;
            if expected < 5.0 {
                pooled_count += c as f64;
                pooled_prob += p;
                continue;
            }
            stat += (c as f64 - expected).powi(2) / expected;
            dof += 1;
        }
        let pooled_expected = pooled_prob * n as f64;
        if pooled_expected > 0.0 {
            stat += (pooled_count - pooled_expected).powi(2) / pooled_expected;
            dof += 1;
        }
        if dof < 1 {
            return 1.0;
        }
        let chi = ChiSquared::new(dof as f64).unwrap();
        1.0 - chi.cdf(stat)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::chi_square_p;
    use super::*;
    use crate::dataset::PopularityTable;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(uniform_sample(&mut rng, 1), 0);
        }
    }

    #[test]
    fn uniform_frequencies_within_binomial_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            counts[uniform_sample(&mut rng, 3)] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn popularity_frequencies_within_binomial_bound() {
        let table = PopularityTable::from_counts(vec![2, 1, 1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            counts[popularity_sample(&mut rng, &table)] += 1;
        }
        for (i, &expected) in [20_000.0, 10_000.0, 10_000.0].iter().enumerate() {
            let p = table.prob(i);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[i] as f64 - expected).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn popularity_beta_zero_uniform_draws() {
        let table = PopularityTable::from_counts(vec![9, 1, 1, 1], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0u64; 4];
        for _ in 0..100_000 {
            counts[popularity_sample(&mut rng, &table)] += 1;
        }
        assert!(chi_square_p(&counts, table.probs()) > 0.01);
    }

    #[test]
    fn popularity_zero_mass_never_drawn() {
        let table = PopularityTable::from_counts(vec![1, 0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            assert_eq!(popularity_sample(&mut rng, &table), 0);
        }
    }

    #[test]
    fn in_batch_definition() {
        let negs = in_batch_negatives(&[(0, 0), (1, 1)]).unwrap();
        assert_eq!(negs, vec![vec![1], vec![0]]);

        let batch: Vec<(usize, usize)> = (0..5).map(|k| (k, 10 + k)).collect();
        let negs = in_batch_negatives(&batch).unwrap();
        for (k, list) in negs.iter().enumerate() {
            assert_eq!(list.len(), 4);
            assert!(!list.contains(&(10 + k)));
        }

        assert!(in_batch_negatives(&[(0, 0)]).is_err());
    }

    #[test]
    fn in_batch_matches_empirical_frequency() {
        // Batches drawn uniformly from TOY's positives {(0,0),(0,1),(1,1)}:
        // item 1 appears as a negative about twice as often as item 0.
        let positives = [(0usize, 0usize), (0, 1), (1, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut count = [0u64; 2];
        for _ in 0..30_000 {
            let batch: Vec<(usize, usize)> =
                (0..2).map(|_| positives[rng.random_range(0..3)]).collect();
            for list in in_batch_negatives(&batch).unwrap() {
                for &j in &list {
                    count[j] += 1;
                }
            }
        }
        let ratio = count[1] as f64 / count[0] as f64;
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn sampled_softmax_hand_value() {
        let v = sampled_softmax_loss(1.0, &[0.0], &[0.5], 1).unwrap();
        let want = (1.0 + 2.0 / 1.0f64.exp()).ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn sampled_softmax_m1_is_shifted_pairwise_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let yi: f64 = rng.random_range(-5.0..5.0);
            let yj: f64 = rng.random_range(-5.0..5.0);
            let q: f64 = rng.random_range(0.01..1.0);
            let ssm = sampled_softmax_loss(yi, &[yj], &[q], 1).unwrap();
            let logistic = crate::losses::LossKind::Logistic.value(yi - yj + q.ln(), 1.0);
            assert!((ssm - logistic).abs() <= 1e-12, "{ssm} vs {logistic}");
        }
    }

    #[test]
    fn sampled_softmax_rejects_bad_q() {
        assert!(sampled_softmax_loss(0.0, &[0.0], &[0.0], 1).is_err());
        assert!(sampled_softmax_loss(0.0, &[0.0, 0.0], &[0.5], 1).is_err());
    }

    #[test]
    fn truncated_rank_distribution_matches_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for gamma in [0.5, 3.0, 50.0] {
            let n = 16;
            let pmf = truncated_exp_rank_pmf(gamma, n);
            let mut counts = vec![0u64; n];
            for _ in 0..100_000 {
                counts[sample_truncated_exp_rank(&mut rng, gamma, n) - 1] += 1;
            }
            assert!(
                chi_square_p(&counts, &pmf) > 0.01,
                "gamma {gamma}: p {}",
                chi_square_p(&counts, &pmf)
            );
        }
    }

    #[test]
    fn truncated_rank_flat_limit_is_uniform() {
        let pmf = truncated_exp_rank_pmf(f64::INFINITY, 8);
        for &p in &pmf {
            assert!((p - 0.125).abs() < 1e-15);
        }
    }
}
