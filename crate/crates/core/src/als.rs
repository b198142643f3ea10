//! Alternating least squares and Gramian-based trainers: the iALS block
//! coordinate descent for the weighted pointwise square loss, its
//! pairwise-square variant, and an SGD loop that replaces the exact
//! Gramians with running estimates.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, solve_spd, Matrix};
use crate::losses::{
    compute_gramians, pairwise_square_loss_fast, pointwise_square_loss_fast,
    transform_observations, LossConfig, LossKind, TransformedObservation,
};
use crate::model::FactorModel;

#[derive(Debug, Clone, Copy)]
pub struct AlsConfig {
    /// Weight of every unobserved pair.
    pub alpha0: f64,
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    /// Worker threads of the block passes; blocks are independent given
    /// the frozen opposite side, so the result is identical for any
    /// thread count.
    pub threads: usize,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            alpha0: 0.1,
            lambda: 0.1,
            epochs: 16,
            threads: 1,
        }
    }
}

/// Solve one least-squares block
/// (sum alpha~ v v^t + alpha0 G + lambda I) x = sum alpha~ y~ v
/// where `rows` yields the (v, alpha~, y~) triples of the block.
pub fn solve_block(
    rows: impl Iterator<Item = (Vec<f64>, f64, f64)>,
    gram_other: &Matrix,
    alpha0: f64,
    lambda: f64,
    d: usize,
) -> Result<Vec<f64>> {
    let mut a = Matrix::zeros(d, d);
    a.add_assign(gram_other, alpha0);
    for r in 0..d {
        let v = a.get(r, r) + lambda;
        a.set(r, r, v);
    }
    let mut b = vec![0.0; d];
    for (v, alpha_tilde, y_tilde) in rows {
        a.add_outer(&v, alpha_tilde);
        axpy(&mut b, alpha_tilde * y_tilde, &v);
    }
    solve_spd(&mut a, &b)
}

fn transformed_by_context(
    transformed: &[TransformedObservation],
    num_contexts: usize,
) -> Vec<Vec<usize>> {
    let mut by_context = vec![Vec::new(); num_contexts];
    for (idx, obs) in transformed.iter().enumerate() {
        by_context[obs.context].push(idx);
    }
    by_context
}

fn transformed_by_item(
    transformed: &[TransformedObservation],
    num_items: usize,
) -> Vec<Vec<usize>> {
    let mut by_item = vec![Vec::new(); num_items];
    for (idx, obs) in transformed.iter().enumerate() {
        by_item[obs.item].push(idx);
    }
    by_item
}

/// One full iALS epoch (context pass, then item pass). Returns the fast
/// pointwise loss after the epoch; it never increases from epoch to
/// epoch because each block solve minimizes the loss exactly in its
/// block.
pub fn ials_epoch(model: &mut FactorModel, dataset: &Dataset, config: &AlsConfig) -> Result<f64> {
    let d = model.dim();
    let transformed = transform_observations(dataset, config.alpha0)?;
    let by_context = transformed_by_context(&transformed, dataset.num_contexts());
    let by_item = transformed_by_item(&transformed, dataset.num_items());
    let threads = config.threads.max(1);

    // Each block solve only reads the frozen opposite side and the
    // frozen Gramian, so a pass can fan its rows out over threads and
    // the result is bit-identical to the sequential sweep.
    let run_pass = |blocks: &[Vec<usize>], items_side: bool, gram: &Matrix, model: &FactorModel| {
        let solve_one = |row: usize| -> Result<Vec<f64>> {
            let rows = blocks[row].iter().map(|&idx| {
                let obs = &transformed[idx];
                let v = if items_side {
                    model.context_embedding(obs.context)
                } else {
                    model.item_embedding(obs.item)
                };
                (v.to_vec(), obs.alpha_tilde, obs.y_tilde)
            });
            solve_block(rows, gram, config.alpha0, config.lambda, d)
        };
        if threads == 1 {
            (0..blocks.len()).map(solve_one).collect::<Result<Vec<_>>>()
        } else {
            let chunk = blocks.len().div_ceil(threads);
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..blocks.len())
                    .collect::<Vec<_>>()
                    .chunks(chunk.max(1))
                    .map(|rows| {
                        let rows = rows.to_vec();
                        let solve_one = &solve_one;
                        scope.spawn(move || {
                            rows.into_iter().map(solve_one).collect::<Result<Vec<_>>>()
                        })
                    })
                    .collect();
                let mut out = Vec::with_capacity(blocks.len());
                for handle in handles {
                    out.extend(handle.join().expect("block solver thread panicked")?);
                }
                Ok(out)
            })
        }
    };

    // Context pass against the item Gramian.
    let gram_item = compute_gramians(model, None).gram_item;
    let solved = run_pass(&by_context, false, &gram_item, model)?;
    for (c, w) in solved.into_iter().enumerate() {
        model.context_embedding_mut(c).copy_from_slice(&w);
    }

    // Item pass against the refreshed context Gramian.
    let gram_context = compute_gramians(model, None).gram_context;
    let solved = run_pass(&by_item, true, &gram_context, model)?;
    for (i, h) in solved.into_iter().enumerate() {
        model.item_embedding_mut(i).copy_from_slice(&h);
    }

    let loss_cfg = LossConfig {
        kind: LossKind::Square,
        alpha0: config.alpha0,
        lambda: config.lambda,
        nu: 1.0,
    };
    let grams = compute_gramians(model, None);
    pointwise_square_loss_fast(model, &transformed, &loss_cfg, &grams)
}

pub fn train_ials(
    model: &mut FactorModel,
    dataset: &Dataset,
    config: &AlsConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<()> {
    for epoch in 0..config.epochs {
        let loss = ials_epoch(model, dataset, config)?;
        on_epoch(epoch, loss);
    }
    Ok(())
}

/// One epoch of the pairwise-square block solver. The context blocks
/// are independent given H; the item pass is a Gauss-Seidel sweep that
/// keeps the item sum z and the residual sum v consistent after every
/// solve, so the exact pairwise-square objective is monotone.
pub fn ials_pairwise_epoch(
    model: &mut FactorModel,
    dataset: &Dataset,
    config: &AlsConfig,
) -> Result<f64> {
    let d = model.dim();
    let n = dataset.num_items() as f64;
    if dataset.num_items() < 2 {
        return Err(Error::invalid("pairwise solver needs at least 2 items"));
    }

    // Context pass: minimize
    //   sum_{i in I_c} sum_{j in I} (w^t h_i - w^t h_j - 1)^2 + lambda |w|^2
    // whose normal equations are
    //   [N sum h h^t - sum (h z^t + z h^t) + |I_c| G^I + lambda I] w
    //     = N sum h_i - |I_c| z.
    let grams = compute_gramians(model, None);
    let z = grams.item_sum.clone();
    for c in 0..dataset.num_contexts() {
        let items = dataset.items_of(c);
        if items.is_empty() {
            continue;
        }
        let n_c = items.len() as f64;
        let mut a = Matrix::zeros(d, d);
        a.add_assign(&grams.gram_item, n_c);
        let mut b = vec![0.0; d];
        for &i in &items {
            let h = model.item_embedding(i);
            a.add_outer(h, n);
            // -(h z^t + z h^t)
            for r in 0..d {
                for s in 0..d {
                    let v = a.get(r, s) - h[r] * z[s] - z[r] * h[s];
                    a.set(r, s, v);
                }
            }
            axpy(&mut b, n, h);
        }
        axpy(&mut b, -n_c, &z);
        for r in 0..d {
            let v = a.get(r, r) + config.lambda;
            a.set(r, r, v);
        }
        let w = solve_spd(&mut a, &b)?;
        model.context_embedding_mut(c).copy_from_slice(&w);
    }

    // Item pass. With w fixed, h_i minimizes
    //   sum_{c in C_i} sum_{j != i} (w^t h_i - w^t h_j - 1)^2
    //   + sum_{(c,k) in S, k != i} (y^_ck - w^t h_i - 1)^2 + lambda |h_i|^2.
    // Maintained across solves: z = sum_j h_j and
    // v = sum_{(c,k) in S} (y^_ck - 1) w_c.
    let weighted = compute_gramians(model, Some(dataset));
    let gram_context_w = weighted.gram_context;
    let mut z = vec![0.0; d];
    for i in 0..model.num_items() {
        axpy(&mut z, 1.0, model.item_embedding(i));
    }
    let mut v = vec![0.0; d];
    for it in dataset.interactions() {
        let err = model.score(it.context, it.item) - 1.0;
        axpy(&mut v, err, model.context_embedding(it.context));
    }

    for i in 0..dataset.num_items() {
        let contexts: Vec<usize> = dataset.item_interactions(i).map(|it| it.context).collect();
        // z without item i, and v without the terms where i is positive.
        let mut z_rest = z.clone();
        axpy(&mut z_rest, -1.0, model.item_embedding(i));
        let mut u = v.clone();
        for &c in &contexts {
            let err = model.score(c, i) - 1.0;
            axpy(&mut u, -err, model.context_embedding(c));
        }

        let mut a = Matrix::zeros(d, d);
        a.add_assign(&gram_context_w, 1.0);
        let mut b = u.clone();
        for &c in &contexts {
            let w = model.context_embedding(c);
            a.add_outer(w, n - 2.0);
            axpy(&mut b, dot(w, &z_rest) + (n - 1.0), w);
        }
        for r in 0..d {
            let val = a.get(r, r) + config.lambda;
            a.set(r, r, val);
        }
        let h = solve_spd(&mut a, &b)?;
        model.item_embedding_mut(i).copy_from_slice(&h);

        // Restore the invariants with the new h_i: z regains the item
        // and v = u plus i's refreshed positive residuals.
        z = z_rest;
        axpy(&mut z, 1.0, &h);
        v = u;
        for &c in &contexts {
            let err = model.score(c, i) - 1.0;
            axpy(&mut v, err, model.context_embedding(c));
        }
    }

    let grams = compute_gramians(model, Some(dataset));
    Ok(pairwise_square_loss_fast(model, dataset, &grams)? + config.lambda * model.param_sq_norm())
}

pub fn train_ials_pairwise(
    model: &mut FactorModel,
    dataset: &Dataset,
    config: &AlsConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<()> {
    for epoch in 0..config.epochs {
        let loss = ials_pairwise_epoch(model, dataset, config)?;
        on_epoch(epoch, loss);
    }
    Ok(())
}

/// Running estimates of the two Gramians, updated one rank-one term at
/// a time from the embeddings the SGD loop touches.
#[derive(Debug, Clone)]
pub struct GramianEstimate {
    pub gram_context: Matrix,
    pub gram_item: Matrix,
}

impl GramianEstimate {
    /// Start from the exact Gramians of the initial model.
    pub fn exact(model: &FactorModel) -> Self {
        let grams = compute_gramians(model, None);
        GramianEstimate {
            gram_context: grams.gram_context,
            gram_item: grams.gram_item,
        }
    }

    pub fn zeros(d: usize) -> Self {
        GramianEstimate {
            gram_context: Matrix::zeros(d, d),
            gram_item: Matrix::zeros(d, d),
        }
    }
}

/// The moving-average Gramian update
///   G^ <- G^ (1 - eta/fan_out) + (eta/fan_out) * population * phi phi^t
/// with fan_out = |I_c| (context side, population |C|) or |C_i| (item
/// side, population |I|). Under uniform sampling of (c, i) from S the
/// 1/fan_out rate cancels the visit frequency, so the unique stationary
/// point of the expected update is the exact Gramian.
pub fn gramian_estimate_update(
    estimate: &mut Matrix,
    phi: &[f64],
    fan_out: usize,
    population: usize,
    eta: f64,
) -> Result<()> {
    if fan_out == 0 {
        return Err(Error::invalid("gramian estimate fan-out must be >= 1"));
    }
    let rate = eta / fan_out as f64;
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "gramian estimate mix eta/fan_out = {rate} must lie in [0, 1]"
        )));
    }
    estimate.scale(1.0 - rate);
    estimate.add_outer(phi, rate * population as f64);
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SgdGramianConfig {
    pub learning_rate: f64,
    /// Moving-average rate of the Gramian estimates.
    pub estimate_rate: f64,
    pub alpha0: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Start the estimates from the exact Gramians instead of zeros.
    pub exact_init: bool,
}

impl Default for SgdGramianConfig {
    fn default() -> Self {
        SgdGramianConfig {
            learning_rate: 0.05,
            estimate_rate: 0.02,
            alpha0: 0.1,
            lambda: 0.1,
            epochs: 32,
            seed: 0,
            exact_init: true,
        }
    }
}

/// One epoch of SGD on the transformed pointwise square loss with the
/// Gramian terms served by running estimates. Each iteration takes one
/// interaction for the parameter step, whose objective is
///   alpha~ (y^ - y~)^2
///   + (alpha0/2) ((1/|I_c|) w^t G^_I w + (1/|C_i|) h^t G^_C h)
///   + (lambda/|I_c|) |w|^2 + (lambda/|C_i|) |h|^2
/// (summing to the full objective over an epoch when the estimates are
/// exact), then draws a second, independent interaction to refresh both
/// Gramian estimates. No negative sampling occurs anywhere.
pub fn sgd_gramian_epoch(
    model: &mut FactorModel,
    dataset: &Dataset,
    estimate: &mut GramianEstimate,
    config: &SgdGramianConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let transformed = transform_observations(dataset, config.alpha0)?;
    let num_contexts = model.num_contexts();
    let num_items = model.num_items();
    let mut order: Vec<usize> = (0..transformed.len()).collect();
    order.shuffle(rng);
    let eta = config.learning_rate;

    for idx in order {
        let obs = transformed[idx];
        let (c, i) = (obs.context, obs.item);
        let fan_c = dataset.context_degree(c) as f64;
        let fan_i = dataset.item_degree(i) as f64;
        let err = model.score(c, i) - obs.y_tilde;

        // Gather the full gradient at the pre-step parameters.
        let mut grad_w: Vec<f64> = model.item_embedding(i).to_vec();
        for g in grad_w.iter_mut() {
            *g *= 2.0 * obs.alpha_tilde * err;
        }
        let gw_gram = estimate.gram_item.mul_vec(model.context_embedding(c));
        axpy(&mut grad_w, config.alpha0 / fan_c, &gw_gram);
        axpy(
            &mut grad_w,
            2.0 * config.lambda / fan_c,
            model.context_embedding(c),
        );

        let mut grad_h: Vec<f64> = model.context_embedding(c).to_vec();
        for g in grad_h.iter_mut() {
            *g *= 2.0 * obs.alpha_tilde * err;
        }
        let gh_gram = estimate.gram_context.mul_vec(model.item_embedding(i));
        axpy(&mut grad_h, config.alpha0 / fan_i, &gh_gram);
        axpy(
            &mut grad_h,
            2.0 * config.lambda / fan_i,
            model.item_embedding(i),
        );

        axpy(model.context_embedding_mut(c), -eta, &grad_w);
        axpy(model.item_embedding_mut(i), -eta, &grad_h);

        // Independent draw for the estimate refresh.
        let fresh = transformed[rng.random_range(0..transformed.len())];
        gramian_estimate_update(
            &mut estimate.gram_context,
            model.context_embedding(fresh.context),
            dataset.context_degree(fresh.context),
            num_contexts,
            config.estimate_rate,
        )?;
        gramian_estimate_update(
            &mut estimate.gram_item,
            model.item_embedding(fresh.item),
            dataset.item_degree(fresh.item),
            num_items,
            config.estimate_rate,
        )?;
    }

    let loss_cfg = LossConfig {
        kind: LossKind::Square,
        alpha0: config.alpha0,
        lambda: config.lambda,
        nu: 1.0,
    };
    let grams = compute_gramians(model, None);
    pointwise_square_loss_fast(model, &transformed, &loss_cfg, &grams)
}

pub fn train_sgd_gramian(
    model: &mut FactorModel,
    dataset: &Dataset,
    config: &SgdGramianConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut estimate = if config.exact_init {
        GramianEstimate::exact(model)
    } else {
        GramianEstimate::zeros(model.dim())
    };
    for epoch in 0..config.epochs {
        let loss = sgd_gramian_epoch(model, dataset, &mut estimate, config, &mut rng)?;
        on_epoch(epoch, loss);
    }
    Ok(())
}
