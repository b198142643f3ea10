//! Loss definitions: the three naive full-enumeration losses (pointwise,
//! pairwise, softmax) that serve as oracles, the observation transform
//! for weighted square loss, Gram matrices, and the fast Gramian-form
//! evaluations they enable.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::FactorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Square,
    Logistic,
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(LossKind::Square),
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::invalid(format!("unknown loss kind {other:?}"))),
        }
    }
}

impl LossKind {
    /// Label used for unobserved pairs: 0 for regression, -1 for
    /// classification losses.
    pub fn negative_label(&self) -> f64 {
        match self {
            LossKind::Square => 0.0,
            LossKind::Logistic | LossKind::Hinge => -1.0,
        }
    }

    pub fn value(&self, pred: f64, label: f64) -> f64 {
        match self {
            LossKind::Square => (pred - label).powi(2),
            LossKind::Logistic => ln_1p_exp(-label * pred),
            LossKind::Hinge => (1.0 - label * pred).max(0.0),
        }
    }

    /// d loss / d pred.
    pub fn derivative(&self, pred: f64, label: f64) -> f64 {
        match self {
            LossKind::Square => 2.0 * (pred - label),
            LossKind::Logistic => -label * sigmoid(-label * pred),
            LossKind::Hinge => {
                if 1.0 - label * pred > 0.0 {
                    -label
                } else {
                    0.0
                }
            }
        }
    }
}

/// ln(1 + exp(x)) without overflow for large |x|.
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of every unobserved pair.
    pub alpha0: f64,
    /// L2 regularization strength.
    pub lambda: f64,
    /// Softmax inverse temperature.
    pub nu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Square,
            alpha0: 0.0,
            lambda: 0.0,
            nu: 1.0,
        }
    }
}

/// One observation after the weighted-square-loss rewrite:
/// alpha~ = alpha - alpha0, y~ = y * alpha / (alpha - alpha0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedObservation {
    pub context: usize,
    pub item: usize,
    pub alpha_tilde: f64,
    pub y_tilde: f64,
}

/// The two d x d Gram matrices, the item-sum vector z, and whether the
/// context side carries the per-context |I_c| weighting.
#[derive(Debug, Clone)]
pub struct GramianPair {
    pub gram_context: Matrix,
    pub gram_item: Matrix,
    pub item_sum: Vec<f64>,
    pub context_weighted: bool,
}

/// Full-enumeration pointwise loss over C x I: the oracle for the fast
/// Gramian path. Positives carry the dataset weights and labels; all
/// other pairs carry weight alpha0 and the loss kind's negative label.
pub fn pointwise_loss_naive(model: &FactorModel, dataset: &Dataset, config: &LossConfig) -> f64 {
    let neg_label = config.kind.negative_label();
    let mut total = 0.0;
    for c in 0..dataset.num_contexts() {
        let positives: Vec<(usize, f64, f64)> = dataset
            .context_interactions(c)
            .map(|it| (it.item, it.weight, it.label))
            .collect();
        let mut pos_iter = positives.iter().peekable();
        for i in 0..dataset.num_items() {
            let pred = model.score(c, i);
            match pos_iter.peek() {
                Some(&&(item, weight, label)) if item == i => {
                    total += weight * config.kind.value(pred, label);
                    pos_iter.next();
                }
                _ => total += config.alpha0 * config.kind.value(pred, neg_label),
            }
        }
    }
    total + config.lambda * model.param_sq_norm()
}

/// Full pair enumeration of the pairwise loss. With
/// `exclude_observed`, pairs (c,j) with j also observed for c are
/// skipped; the default sums over all j in I, matching the algebra the
/// fast path reproduces.
pub fn pairwise_loss_naive(
    model: &FactorModel,
    dataset: &Dataset,
    config: &LossConfig,
    exclude_observed: bool,
) -> f64 {
    let mut total = 0.0;
    for it in dataset.interactions() {
        let pos_score = model.score(it.context, it.item);
        for j in 0..dataset.num_items() {
            if exclude_observed && dataset.contains(it.context, j) {
                continue;
            }
            let diff = pos_score - model.score(it.context, j);
            total += config.kind.value(diff, 1.0);
        }
    }
    total + config.lambda * model.param_sq_norm()
}

/// Full softmax loss with a max-shifted log-sum-exp partition function.
pub fn softmax_loss_naive(model: &FactorModel, dataset: &Dataset, config: &LossConfig) -> f64 {
    let mut total = 0.0;
    for c in 0..dataset.num_contexts() {
        if dataset.context_degree(c) == 0 {
            continue;
        }
        let scores: Vec<f64> = model.score_all(c).iter().map(|s| config.nu * s).collect();
        let lse = log_sum_exp(&scores);
        for it in dataset.context_interactions(c) {
            total -= scores[it.item] - lse;
        }
    }
    total + config.lambda * model.param_sq_norm()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Rewrite every positive observation so that the weighted square loss
/// over C x I becomes a loss over positives plus the Gramian term:
/// alpha~ = alpha - alpha0, y~ = y * alpha / (alpha - alpha0).
pub fn transform_observations(
    dataset: &Dataset,
    alpha0: f64,
) -> Result<Vec<TransformedObservation>> {
    dataset
        .interactions()
        .iter()
        .map(|it| {
            let alpha_tilde = it.weight - alpha0;
            if alpha_tilde <= 0.0 {
                return Err(Error::invalid(format!(
                    "alpha(c,i) = {} <= alpha0 = {alpha0} for pair ({}, {})",
                    it.weight, it.context, it.item
                )));
            }
            Ok(TransformedObservation {
                context: it.context,
                item: it.item,
                alpha_tilde,
                y_tilde: it.label * it.weight / alpha_tilde,
            })
        })
        .collect()
}

/// Gram matrices G^C, G^I and the item-sum vector z. Passing a dataset
/// weights each context term by |I_c| (the pairwise-square variant).
pub fn compute_gramians(model: &FactorModel, weighted_by: Option<&Dataset>) -> GramianPair {
    let d = model.dim();
    let mut gram_context = Matrix::zeros(d, d);
    let mut gram_item = Matrix::zeros(d, d);
    let mut item_sum = vec![0.0; d];
    for c in 0..model.num_contexts() {
        let weight = match weighted_by {
            Some(ds) => ds.context_degree(c) as f64,
            None => 1.0,
        };
        if weight != 0.0 {
            gram_context.add_outer(model.context_embedding(c), weight);
        }
    }
    for i in 0..model.num_items() {
        let h = model.item_embedding(i);
        gram_item.add_outer(h, 1.0);
        linalg::axpy(&mut item_sum, 1.0, h);
    }
    GramianPair {
        gram_context,
        gram_item,
        item_sum,
        context_weighted: weighted_by.is_some(),
    }
}

/// Fast evaluation of the transformed pointwise square loss:
/// sum alpha~ (y^ - y~)^2 + alpha0 <G^C, G^I> + lambda ||theta||^2.
/// Differs from the naive loss by a parameter-independent constant.
pub fn pointwise_square_loss_fast(
    model: &FactorModel,
    transformed: &[TransformedObservation],
    config: &LossConfig,
    grams: &GramianPair,
) -> Result<f64> {
    if config.kind != LossKind::Square {
        return Err(Error::invalid(
            "fast pointwise loss requires the square loss",
        ));
    }
    if grams.context_weighted {
        return Err(Error::invalid(
            "fast pointwise loss requires unweighted Gramians",
        ));
    }
    let mut total = 0.0;
    for obs in transformed {
        let err = model.score(obs.context, obs.item) - obs.y_tilde;
        total += obs.alpha_tilde * err * err;
    }
    total += config.alpha0 * grams.gram_context.frob_dot(&grams.gram_item);
    Ok(total + config.lambda * model.param_sq_norm())
}

/// Exact pairwise square loss (alpha == 1, lambda-free) via the
/// reformulation sum |I|(y^-1)^2 + <G^C_w, G^I> - 2 sum (y^-1) <w_c, z>.
pub fn pairwise_square_loss_fast(
    model: &FactorModel,
    dataset: &Dataset,
    grams: &GramianPair,
) -> Result<f64> {
    if !grams.context_weighted {
        return Err(Error::invalid(
            "fast pairwise loss requires |I_c|-weighted context Gramian",
        ));
    }
    let num_items = dataset.num_items() as f64;
    let mut total = grams.gram_context.frob_dot(&grams.gram_item);
    for it in dataset.interactions() {
        let err = model.score(it.context, it.item) - 1.0;
        total += num_items * err * err;
        total -= 2.0 * err * linalg::dot(model.context_embedding(it.context), &grams.item_sum);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorModel;
    use crate::testfix::{toy_dataset, toy_model};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: LossKind, alpha0: f64, lambda: f64) -> LossConfig {
        LossConfig {
            kind,
            alpha0,
            lambda,
            nu: 1.0,
        }
    }

    #[test]
    fn pointwise_naive_toy_hand_value() {
        let v = pointwise_loss_naive(
            &toy_model(),
            &toy_dataset(),
            &cfg(LossKind::Square, 0.5, 0.0),
        );
        // positives (1-1)^2 + (0-1)^2 + (1-1)^2 = 1; negatives 0.5*(1+0+1) = 1.
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pointwise_naive_zero_model() {
        let zero = FactorModel::init(2, 3, 2, 0, 0.0).unwrap();
        let v = pointwise_loss_naive(&zero, &toy_dataset(), &cfg(LossKind::Square, 0.0, 0.0));
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pointwise_naive_regularizer_only() {
        // All-zero weights: rebuild the toy set with weight 0 everywhere.
        let ds = crate::dataset::Dataset::from_interactions(
            2,
            3,
            toy_dataset().interactions().iter().map(|it| {
                let mut it = *it;
                it.weight = 0.0;
                it
            }),
        )
        .unwrap();
        let m = toy_model();
        let v = pointwise_loss_naive(&m, &ds, &cfg(LossKind::Square, 0.0, 1.0));
        assert!((v - m.param_sq_norm()).abs() < 1e-12);
    }

    #[test]
    fn pairwise_naive_toy_hand_value() {
        let v = pairwise_loss_naive(
            &toy_model(),
            &toy_dataset(),
            &cfg(LossKind::Square, 0.0, 0.0),
            false,
        );
        assert!((v - 13.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_naive_zero_model() {
        let zero = FactorModel::init(2, 3, 2, 0, 0.0).unwrap();
        let v = pairwise_loss_naive(
            &zero,
            &toy_dataset(),
            &cfg(LossKind::Square, 0.0, 0.0),
            false,
        );
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_logistic_saturates() {
        // Scores y^(c,i) - y^(c,j) large and positive for observed i vs all j:
        // a single positive that dominates.
        let m = FactorModel::from_matrices(
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![1000.0], vec![-1000.0]]),
        )
        .unwrap();
        let ds = crate::dataset::Dataset::from_interactions(
            1,
            2,
            [crate::dataset::Interaction {
                context: 0,
                item: 0,
                label: 1.0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let v = pairwise_loss_naive(&m, &ds, &cfg(LossKind::Logistic, 0.0, 0.0), true);
        assert!(v < 1e-12, "loss {v}");
        assert!(v.is_finite());
    }

    #[test]
    fn softmax_naive_zero_model() {
        let zero = FactorModel::init(2, 3, 2, 0, 0.0).unwrap();
        let v = softmax_loss_naive(&zero, &toy_dataset(), &cfg(LossKind::Square, 0.0, 0.0));
        assert!((v - 3.0 * 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_naive_toy_hand_value() {
        let v = softmax_loss_naive(
            &toy_model(),
            &toy_dataset(),
            &cfg(LossKind::Square, 0.0, 0.0),
        );
        let lse_c0 = (2.0 * 1.0f64.exp() + 1.0).ln();
        let lse_c1 = (2.0 * 1.0f64.exp() + 1.0).ln();
        let want = -(1.0 - lse_c0) - (0.0 - lse_c0) - (1.0 - lse_c1);
        assert!((v - want).abs() < 1e-12);
        assert!((v - 3.585984412174753).abs() < 1e-12);
    }

    #[test]
    fn softmax_nu_absorption() {
        let m = FactorModel::init(4, 6, 3, 5, 0.4).unwrap();
        let ds = crate::dataset::Dataset::parse_tsv(std::io::Cursor::new(
            "#dims 4 6\n0\t1\n0\t3\n1\t0\n2\t5\n3\t2\n3\t4\n",
        ))
        .unwrap();
        let mut doubled = m.clone();
        doubled.items_mut().scale(2.0);
        let a = softmax_loss_naive(
            &m,
            &ds,
            &LossConfig {
                nu: 2.0,
                ..cfg(LossKind::Square, 0.0, 0.0)
            },
        );
        let b = softmax_loss_naive(
            &doubled,
            &ds,
            &LossConfig {
                nu: 1.0,
                ..cfg(LossKind::Square, 0.0, 0.0)
            },
        );
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn softmax_stable_for_huge_scores() {
        let m = FactorModel::from_matrices(
            Matrix::from_rows(&[vec![700.0]]),
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]),
        )
        .unwrap();
        let ds = crate::dataset::Dataset::from_interactions(
            1,
            2,
            [crate::dataset::Interaction {
                context: 0,
                item: 0,
                label: 1.0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let v = softmax_loss_naive(&m, &ds, &cfg(LossKind::Square, 0.0, 0.0));
        assert!(v.is_finite());
        assert!(v >= 0.0);
    }

    #[test]
    fn transform_hand_values() {
        let ds = toy_dataset();
        let t = transform_observations(&ds, 0.5).unwrap();
        for obs in &t {
            assert!((obs.alpha_tilde - 0.5).abs() < 1e-15);
            assert!((obs.y_tilde - 2.0).abs() < 1e-15);
        }
        // alpha0 = 0 is the identity transform.
        let t = transform_observations(&ds, 0.0).unwrap();
        for obs in &t {
            assert_eq!(obs.alpha_tilde, 1.0);
            assert_eq!(obs.y_tilde, 1.0);
        }
        assert!(transform_observations(&ds, 1.0).is_err());
    }

    #[test]
    fn gramians_toy() {
        let g = compute_gramians(&toy_model(), None);
        assert_eq!(g.gram_context.row(0), &[1.0, 0.0]);
        assert_eq!(g.gram_context.row(1), &[0.0, 1.0]);
        assert_eq!(g.gram_item.row(0), &[2.0, 1.0]);
        assert_eq!(g.gram_item.row(1), &[1.0, 2.0]);
        assert_eq!(g.item_sum, vec![2.0, 2.0]);
        // <G^C, G^I> = sum of squared scores over all 6 pairs = 4.
        assert!((g.gram_context.frob_dot(&g.gram_item) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gramian_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let nc = rng.random_range(1..=50);
            let ni = rng.random_range(1..=50);
            let d = rng.random_range(1..=8);
            let m = FactorModel::init(nc, ni, d, trial, 0.5).unwrap();
            let g = compute_gramians(&m, None);
            assert!(g.gram_context.max_asymmetry() == 0.0);
            assert!(g.gram_item.max_asymmetry() == 0.0);
            let fast = g.gram_context.frob_dot(&g.gram_item);
            let mut brute = 0.0;
            for c in 0..nc {
                for i in 0..ni {
                    brute += m.score(c, i).powi(2);
                }
            }
            let rel = (fast - brute).abs() / brute.abs().max(1e-30);
            assert!(rel <= 1e-10, "rel {rel}");
        }
    }

    #[test]
    fn fast_pointwise_hand_values() {
        let m = toy_model();
        let ds = toy_dataset();
        let config = cfg(LossKind::Square, 0.5, 0.0);
        let t = transform_observations(&ds, 0.5).unwrap();
        let g = compute_gramians(&m, None);
        let fast = pointwise_square_loss_fast(&m, &t, &config, &g).unwrap();
        assert!((fast - 5.0).abs() < 1e-12);
        // Constant offset to the naive loss: sum over positives of
        // (alpha y^2 - alpha~ y~^2) = 3*(1 - 2) = -3.
        let naive = pointwise_loss_naive(&m, &ds, &config);
        assert!((fast + (-3.0) - naive).abs() < 1e-12);
    }

    #[test]
    fn fast_pointwise_equals_naive_when_alpha0_zero() {
        let m = FactorModel::init(5, 7, 3, 13, 0.3).unwrap();
        let ds = crate::dataset::Dataset::parse_tsv(std::io::Cursor::new(
            "#dims 5 7\n0\t1\n1\t2\n2\t0\n2\t6\n4\t3\n",
        ))
        .unwrap();
        let config = cfg(LossKind::Square, 0.0, 0.25);
        let t = transform_observations(&ds, 0.0).unwrap();
        let g = compute_gramians(&m, None);
        let fast = pointwise_square_loss_fast(&m, &t, &config, &g).unwrap();
        let naive = pointwise_loss_naive(&m, &ds, &config);
        assert!((fast - naive).abs() < 1e-10, "{fast} vs {naive}");
    }

    #[test]
    fn fast_pointwise_zero_model() {
        let zero = FactorModel::init(2, 3, 2, 0, 0.0).unwrap();
        let ds = toy_dataset();
        let config = cfg(LossKind::Square, 0.5, 0.0);
        let t = transform_observations(&ds, 0.5).unwrap();
        let g = compute_gramians(&zero, None);
        let fast = pointwise_square_loss_fast(&zero, &t, &config, &g).unwrap();
        assert!((fast - 6.0).abs() < 1e-12);
    }

    /// Central finite differences of a scalar function of the model
    /// parameters.
    fn finite_diff_grad(
        model: &FactorModel,
        f: &dyn Fn(&FactorModel) -> f64,
        eps: f64,
    ) -> Vec<f64> {
        let mut grad = Vec::new();
        let nc = model.num_contexts();
        let d = model.dim();
        let total = (nc + model.num_items()) * d;
        for p in 0..total {
            let mut plus = model.clone();
            let mut minus = model.clone();
            {
                let bump = |m: &mut FactorModel, delta: f64| {
                    if p < nc * d {
                        m.context_embedding_mut(p / d)[p % d] += delta;
                    } else {
                        let q = p - nc * d;
                        m.item_embedding_mut(q / d)[q % d] += delta;
                    }
                };
                bump(&mut plus, eps);
                bump(&mut minus, -eps);
            }
            grad.push((f(&plus) - f(&minus)) / (2.0 * eps));
        }
        grad
    }

    #[test]
    fn fast_and_naive_pointwise_gradients_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..5 {
            let nc = rng.random_range(2..=4);
            let ni = rng.random_range(2..=5);
            let d = rng.random_range(1..=3);
            let m = FactorModel::init(nc, ni, d, 200 + trial, 0.4).unwrap();
            let mut lines = format!("#dims {nc} {ni}\n");
            for c in 0..nc {
                let i = rng.random_range(0..ni);
                lines.push_str(&format!("{c}\t{i}\n"));
            }
            let ds = crate::dataset::Dataset::parse_tsv(std::io::Cursor::new(lines)).unwrap();
            let config = cfg(LossKind::Square, 0.3, 0.1);
            let t = transform_observations(&ds, config.alpha0).unwrap();

            let g_naive = finite_diff_grad(&m, &|m| pointwise_loss_naive(m, &ds, &config), 1e-5);
            let g_fast = finite_diff_grad(
                &m,
                &|m| {
                    let g = compute_gramians(m, None);
                    pointwise_square_loss_fast(m, &t, &config, &g).unwrap()
                },
                1e-5,
            );
            for (a, b) in g_naive.iter().zip(&g_fast) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
                assert!(rel <= 1e-4, "gradient mismatch {a} vs {b}");
            }
        }
    }

    #[test]
    fn fast_pairwise_matches_naive() {
        let m = toy_model();
        let ds = toy_dataset();
        let g = compute_gramians(&m, Some(&ds));
        let fast = pairwise_square_loss_fast(&m, &ds, &g).unwrap();
        assert!((fast - 13.0).abs() < 1e-12);

        let zero = FactorModel::init(2, 3, 2, 0, 0.0).unwrap();
        let gz = compute_gramians(&zero, Some(&ds));
        let fastz = pairwise_square_loss_fast(&zero, &ds, &gz).unwrap();
        assert!((fastz - 9.0).abs() < 1e-12);
    }

    #[test]
    fn fast_pairwise_single_pair_instance() {
        // Single context, single item, score 1: naive (1-1-1)^2 = 1.
        let m = FactorModel::from_matrices(
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![1.0]]),
        )
        .unwrap();
        let ds = crate::dataset::Dataset::from_interactions(
            1,
            1,
            [crate::dataset::Interaction {
                context: 0,
                item: 0,
                label: 1.0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let g = compute_gramians(&m, Some(&ds));
        let fast = pairwise_square_loss_fast(&m, &ds, &g).unwrap();
        let naive = pairwise_loss_naive(&m, &ds, &cfg(LossKind::Square, 0.0, 0.0), false);
        assert!((naive - 1.0).abs() < 1e-12);
        assert!((fast - naive).abs() < 1e-12);
    }

    #[test]
    fn fast_pairwise_matches_naive_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for trial in 0..20 {
            let nc = rng.random_range(1..=10);
            let ni = rng.random_range(1..=12);
            let d = rng.random_range(1..=6);
            let m = FactorModel::init(nc, ni, d, 900 + trial, 0.6).unwrap();
            let mut lines = format!("#dims {nc} {ni}\n");
            for c in 0..nc {
                for _ in 0..rng.random_range(0..=3) {
                    lines.push_str(&format!("{c}\t{}\n", rng.random_range(0..ni)));
                }
            }
            let ds = crate::dataset::Dataset::parse_tsv(std::io::Cursor::new(lines)).unwrap();
            let g = compute_gramians(&m, Some(&ds));
            let fast = pairwise_square_loss_fast(&m, &ds, &g).unwrap();
            let naive = pairwise_loss_naive(&m, &ds, &cfg(LossKind::Square, 0.0, 0.0), false);
            let rel = (fast - naive).abs() / naive.abs().max(1e-30);
            assert!(rel <= 1e-10, "rel {rel}");
        }
    }
}
