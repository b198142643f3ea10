//! Sampling-based SGD trainers: pointwise, pairwise (with constant,
//! rank-metric and WARP-penalty weighting) and sampled-softmax loops.
//! Every step computes the full analytic gradient of its per-step
//! objective at the pre-step parameters and applies it in one sweep,
//! with L2 regularization on the touched rows only.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, PopularityTable};
use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::losses::LossConfig;
use crate::metrics::Metric;
use crate::model::FactorModel;
use crate::samplers::{
    adaptive_exact_prob, adaptive_rank_sample, build_kernel_tree, kernel_exact_prob, kernel_sample,
    popularity_sample, rebuild_adaptive_state, sampled_softmax_weights, two_pass_sample,
    uniform_sample, warp_penalty, warp_sample, AdaptiveState, KernelTree, SamplerConfig,
    SamplerKind,
};

/// Per-pair gradient weight of the pairwise trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Constant,
    /// |M(rank of i) - M(rank of j)| with exact ranks by full scoring.
    LambdaRank {
        metric: Metric,
        n: usize,
    },
    /// warp_penalty(rank estimate); requires the warp sampler and the
    /// hinge loss.
    WarpPenalty,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Draws between rebuilds of the adaptive / kernel sampler state.
    pub refresh_every: usize,
    pub weighting: Weighting,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            seed: 0,
            batch_size: 16,
            refresh_every: 1024,
            weighting: Weighting::Constant,
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Stateful negative sampler: owns whatever precomputed structure the
/// chosen distribution needs and reports the proposal probability q(j|c)
/// alongside each draw.
pub struct NegativeSampler {
    config: SamplerConfig,
    refresh_every: usize,
    draws_since_refresh: usize,
    table: Option<PopularityTable>,
    adaptive: Option<AdaptiveState>,
    kernel: Option<KernelTree>,
}

impl NegativeSampler {
    pub fn new(
        dataset: &Dataset,
        model: &FactorModel,
        config: SamplerConfig,
        refresh_every: usize,
    ) -> Result<Self> {
        let table = match config.kind {
            SamplerKind::Popularity | SamplerKind::TwoPass => {
                Some(dataset.popularity_distribution(config.beta)?)
            }
            _ => None,
        };
        let adaptive = match config.kind {
            SamplerKind::Adaptive => Some(rebuild_adaptive_state(model)),
            _ => None,
        };
        let kernel = match config.kind {
            SamplerKind::Kernel => Some(build_kernel_tree(model, config.lambda0)),
            _ => None,
        };
        Ok(NegativeSampler {
            config,
            refresh_every: refresh_every.max(1),
            draws_since_refresh: 0,
            table,
            adaptive,
            kernel,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.config.kind
    }

    /// Rebuild model-dependent state (adaptive sorted lists, kernel
    /// tree) once the refresh budget is spent.
    fn maybe_refresh(&mut self, model: &FactorModel) {
        self.draws_since_refresh += 1;
        if self.draws_since_refresh < self.refresh_every {
            return;
        }
        self.draws_since_refresh = 0;
        if self.adaptive.is_some() {
            self.adaptive = Some(rebuild_adaptive_state(model));
        }
        if self.kernel.is_some() {
            self.kernel = Some(build_kernel_tree(model, self.config.lambda0));
        }
    }

    /// Draw `m` negatives with their proposal probabilities.
    pub fn draw(
        &mut self,
        rng: &mut impl Rng,
        model: &FactorModel,
        c: usize,
    ) -> Result<Vec<(usize, f64)>> {
        self.maybe_refresh(model);
        let n = model.num_items();
        let m = self.config.m;
        match self.config.kind {
            SamplerKind::Uniform => Ok((0..m)
                .map(|_| (uniform_sample(rng, n), 1.0 / n as f64))
                .collect()),
            SamplerKind::Popularity => {
                let table = self
                    .table
                    .as_ref()
                    .expect("popularity table built in new()");
                Ok((0..m)
                    .map(|_| {
                        let j = popularity_sample(rng, table);
                        (j, table.prob(j))
                    })
                    .collect())
            }
            SamplerKind::Adaptive => {
                let state = self
                    .adaptive
                    .as_ref()
                    .expect("adaptive state built in new()");
                let probs = adaptive_exact_prob(model, c, state, &self.config);
                Ok((0..m)
                    .map(|_| {
                        let j = adaptive_rank_sample(rng, model, c, state, &self.config);
                        (j, probs[j])
                    })
                    .collect())
            }
            SamplerKind::Kernel => {
                let tree = self.kernel.as_ref().expect("kernel tree built in new()");
                let probs = kernel_exact_prob(model, c, self.config.lambda0);
                Ok((0..m)
                    .map(|_| {
                        let j = kernel_sample(rng, tree, model, c);
                        (j, probs[j])
                    })
                    .collect())
            }
            SamplerKind::TwoPass => {
                let table = self
                    .table
                    .as_ref()
                    .expect("popularity table built in new()");
                two_pass_sample(rng, model, table, c, &self.config)
            }
            SamplerKind::InBatch | SamplerKind::Warp => Err(Error::invalid(format!(
                "{:?} negatives are drawn by the training loop, not per-context",
                self.config.kind
            ))),
        }
    }
}

fn shuffled_indices(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

fn check_finite(g: f64, step: usize, c: usize, i: usize, score: f64) -> Result<f64> {
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::numeric(format!(
            "non-finite gradient {g} at step {step} (context {c}, item {i}, score {score})"
        )))
    }
}

/// One gradient step on weight * l(y^(c,i), label) with touched-row
/// regularization of w_c and h_i; returns the (unregularized) loss term.
fn pointwise_step(
    model: &mut FactorModel,
    c: usize,
    i: usize,
    label: f64,
    weight: f64,
    config: &TrainConfig,
    step: usize,
) -> Result<f64> {
    let pred = model.score(c, i);
    let g = check_finite(
        weight * config.loss.kind.derivative(pred, label),
        step,
        c,
        i,
        pred,
    )?;
    let lambda = config.loss.lambda;
    let eta = config.learning_rate;
    let mut grad_w: Vec<f64> = model.item_embedding(i).to_vec();
    for (gw, w) in grad_w.iter_mut().zip(model.context_embedding(c)) {
        *gw = g * *gw + 2.0 * lambda * w;
    }
    let mut grad_h: Vec<f64> = model.context_embedding(c).to_vec();
    for (gh, h) in grad_h.iter_mut().zip(model.item_embedding(i)) {
        *gh = g * *gh + 2.0 * lambda * h;
    }
    axpy(model.context_embedding_mut(c), -eta, &grad_w);
    axpy(model.item_embedding_mut(i), -eta, &grad_h);
    Ok(weight * config.loss.kind.value(pred, label))
}

/// One pass of pointwise SGD (shuffled positives; per positive, one
/// weighted positive step followed by `m` negative-label steps on
/// sampled items). Returns the mean per-positive sampled loss.
pub fn sgd_pointwise_epoch(
    model: &mut FactorModel,
    dataset: &Dataset,
    sampler: &mut NegativeSampler,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    config.validate()?;
    if sampler.kind() == SamplerKind::Warp {
        return Err(Error::invalid("the warp sampler is pairwise-only"));
    }
    let neg_label = config.loss.kind.negative_label();
    let neg_weight = if config.loss.alpha0 > 0.0 {
        config.loss.alpha0
    } else {
        1.0
    };
    let mut total = 0.0;
    let mut steps = 0usize;
    let order = shuffled_indices(dataset.len(), rng);

    if sampler.kind() == SamplerKind::InBatch {
        for window in order.chunks(config.batch_size.max(2)) {
            for (k, &idx) in window.iter().enumerate() {
                let it = dataset.interactions()[idx];
                let mut step_loss = pointwise_step(
                    model, it.context, it.item, it.label, it.weight, config, steps,
                )?;
                for (l, &other_idx) in window.iter().enumerate() {
                    if l == k {
                        continue;
                    }
                    let j = dataset.interactions()[other_idx].item;
                    step_loss +=
                        pointwise_step(model, it.context, j, neg_label, neg_weight, config, steps)?;
                }
                total += step_loss;
                steps += 1;
            }
        }
        return Ok(total / steps.max(1) as f64);
    }

    for idx in order {
        let it = dataset.interactions()[idx];
        let mut step_loss = pointwise_step(
            model, it.context, it.item, it.label, it.weight, config, steps,
        )?;
        for (j, _q) in sampler.draw(rng, model, it.context)? {
            step_loss +=
                pointwise_step(model, it.context, j, neg_label, neg_weight, config, steps)?;
        }
        total += step_loss;
        steps += 1;
    }
    Ok(total / steps.max(1) as f64)
}

/// One gradient step on scale * l(y^(c,i) - y^(c,j), 1) with touched-row
/// regularization of w_c, h_i and h_j; returns the loss term.
fn pairwise_step(
    model: &mut FactorModel,
    c: usize,
    i: usize,
    j: usize,
    scale: f64,
    config: &TrainConfig,
    step: usize,
) -> Result<f64> {
    let diff = model.score(c, i) - model.score(c, j);
    let g = check_finite(
        scale * config.loss.kind.derivative(diff, 1.0),
        step,
        c,
        i,
        diff,
    )?;
    let lambda = config.loss.lambda;
    let eta = config.learning_rate;
    let d = model.dim();
    let mut grad_w = vec![0.0; d];
    let mut grad_hi = vec![0.0; d];
    let mut grad_hj = vec![0.0; d];
    {
        let w = model.context_embedding(c);
        let (hi, hj) = (model.item_embedding(i), model.item_embedding(j));
        for f in 0..d {
            grad_w[f] = g * (hi[f] - hj[f]) + 2.0 * lambda * w[f];
            grad_hi[f] = g * w[f] + 2.0 * lambda * hi[f];
            grad_hj[f] = -g * w[f] + 2.0 * lambda * hj[f];
        }
    }
    // When i == j the pair carries no signal; the two item gradients
    // must be applied jointly so they cancel instead of double-counting.
    if i == j {
        axpy(&mut grad_hi, 1.0, &grad_hj);
        axpy(model.context_embedding_mut(c), -eta, &grad_w);
        axpy(model.item_embedding_mut(i), -eta, &grad_hi);
    } else {
        axpy(model.context_embedding_mut(c), -eta, &grad_w);
        axpy(model.item_embedding_mut(i), -eta, &grad_hi);
        axpy(model.item_embedding_mut(j), -eta, &grad_hj);
    }
    Ok(scale * config.loss.kind.value(diff, 1.0))
}

fn lambda_rank_weight(
    model: &FactorModel,
    c: usize,
    i: usize,
    j: usize,
    metric: Metric,
    n: usize,
) -> Result<f64> {
    let empty = std::collections::HashSet::new();
    let rank_i = model.rank_of(c, i, &empty)?;
    let rank_j = model.rank_of(c, j, &empty)?;
    let catalog = model.num_items();
    Ok((metric.point(rank_i, n, catalog) - metric.point(rank_j, n, catalog)).abs())
}

/// One pass of pairwise SGD on l(y^(c,i) - y^(c,j), 1). Negatives come
/// from the per-context sampler, the WARP rejection loop, or the other
/// positives of an in-batch window; the per-pair weight follows
/// `config.weighting`.
pub fn sgd_pairwise_epoch(
    model: &mut FactorModel,
    dataset: &Dataset,
    sampler: &mut NegativeSampler,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    config.validate()?;
    if config.weighting == Weighting::WarpPenalty {
        if sampler.kind() != SamplerKind::Warp {
            return Err(Error::invalid(
                "warp_penalty weighting requires the warp sampler",
            ));
        }
        if config.loss.kind != crate::losses::LossKind::Hinge {
            return Err(Error::invalid(
                "warp_penalty weighting requires the hinge loss",
            ));
        }
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    let mut skipped = 0usize;
    let order = shuffled_indices(dataset.len(), rng);

    let handle_pair = |model: &mut FactorModel,
                       c: usize,
                       i: usize,
                       j: usize,
                       warp_rank: Option<usize>,
                       step: usize|
     -> Result<f64> {
        let scale = match config.weighting {
            Weighting::Constant => 1.0,
            Weighting::LambdaRank { metric, n } => lambda_rank_weight(model, c, i, j, metric, n)?,
            Weighting::WarpPenalty => {
                warp_penalty(warp_rank.expect("warp sampler supplies a rank estimate"))
            }
        };
        pairwise_step(model, c, i, j, scale, config, step)
    };

    if sampler.kind() == SamplerKind::InBatch {
        for window in order.chunks(config.batch_size.max(2)) {
            for (k, &idx) in window.iter().enumerate() {
                let it = dataset.interactions()[idx];
                let mut step_loss = 0.0;
                for (l, &other_idx) in window.iter().enumerate() {
                    if l == k {
                        continue;
                    }
                    let j = dataset.interactions()[other_idx].item;
                    step_loss += handle_pair(model, it.context, it.item, j, None, steps)?;
                }
                total += step_loss;
                steps += 1;
            }
        }
        return Ok(total / steps.max(1) as f64);
    }

    for idx in order {
        let it = dataset.interactions()[idx];
        let (c, i) = (it.context, it.item);
        let mut step_loss = 0.0;
        if sampler.kind() == SamplerKind::Warp {
            let outcome = warp_sample(rng, model, c, i, &config.sampler);
            match outcome.negative {
                Some(j) => {
                    step_loss += handle_pair(model, c, i, j, Some(outcome.rank_estimate), steps)?;
                }
                None => {
                    skipped += 1;
                    continue;
                }
            }
        } else {
            for (j, _q) in sampler.draw(rng, model, c)? {
                step_loss += handle_pair(model, c, i, j, None, steps)?;
            }
        }
        total += step_loss;
        steps += 1;
    }
    let _ = skipped; // surfaced via the epoch mean denominator
    Ok(total / steps.max(1) as f64)
}

/// One pass of sampled-softmax SGD with the log-q correction: the step
/// loss is -nu y^_i + lse({nu y^_i} u {nu y^_j - ln(m q_j)}) and the
/// gradient distributes the corrected softmax weights p~ over the
/// positive and the sampled negatives.
pub fn sgd_sampled_softmax_epoch(
    model: &mut FactorModel,
    dataset: &Dataset,
    sampler: &mut NegativeSampler,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    config.validate()?;
    if matches!(sampler.kind(), SamplerKind::InBatch | SamplerKind::Warp) {
        return Err(Error::invalid(
            "sampled softmax needs a sampler with per-draw probabilities",
        ));
    }
    let nu = config.loss.nu;
    let m = config.sampler.m;
    let lambda = config.loss.lambda;
    let eta = config.learning_rate;
    let mut total = 0.0;
    let mut steps = 0usize;
    for idx in shuffled_indices(dataset.len(), rng) {
        let it = dataset.interactions()[idx];
        let (c, i) = (it.context, it.item);
        let negatives = sampler.draw(rng, model, c)?;
        let pos_score = nu * model.score(c, i);
        let neg_scores: Vec<f64> = negatives
            .iter()
            .map(|&(j, _)| nu * model.score(c, j))
            .collect();
        let qs: Vec<f64> = negatives.iter().map(|&(_, q)| q).collect();
        let weights = sampled_softmax_weights(pos_score, &neg_scores, &qs, m)?;
        let loss = crate::samplers::sampled_softmax_loss(pos_score, &neg_scores, &qs, m)?;
        check_finite(loss, steps, c, i, pos_score)?;

        // Gather against the pre-step parameters, apply in one sweep.
        let d = model.dim();
        let mut grad_w = vec![0.0; d];
        // d loss / d y^_i = nu (p~_0 - 1); d loss / d y^_j = nu p~_k.
        let g_pos = nu * (weights[0] - 1.0);
        axpy(&mut grad_w, g_pos, model.item_embedding(i));
        let mut item_grads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(m + 1);
        let mut gi = model.context_embedding(c).to_vec();
        for v in gi.iter_mut() {
            *v *= g_pos;
        }
        axpy(&mut gi, 2.0 * lambda, model.item_embedding(i));
        item_grads.push((i, gi));
        for (k, &(j, _)) in negatives.iter().enumerate() {
            let g = nu * weights[k + 1];
            axpy(&mut grad_w, g, model.item_embedding(j));
            let mut gj = model.context_embedding(c).to_vec();
            for v in gj.iter_mut() {
                *v *= g;
            }
            // Touch each distinct item's regularizer once.
            if !item_grads.iter().any(|(seen, _)| *seen == j) {
                axpy(&mut gj, 2.0 * lambda, model.item_embedding(j));
            }
            if let Some((_, acc)) = item_grads.iter_mut().find(|(seen, _)| *seen == j) {
                axpy(acc, 1.0, &gj);
            } else {
                item_grads.push((j, gj));
            }
        }
        axpy(&mut grad_w, 2.0 * lambda, model.context_embedding(c));
        axpy(model.context_embedding_mut(c), -eta, &grad_w);
        for (j, gj) in item_grads {
            axpy(model.item_embedding_mut(j), -eta, &gj);
        }
        total += loss;
        steps += 1;
    }
    Ok(total / steps.max(1) as f64)
}

/// Which SGD loop a solver name maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgdObjective {
    Pointwise,
    Pairwise,
    SampledSoftmax,
}

/// Run `config.epochs` passes of the chosen loop with a seeded rng,
/// reporting (epoch, mean step loss) pairs through the callback.
pub fn train_sgd(
    model: &mut FactorModel,
    dataset: &Dataset,
    objective: SgdObjective,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<()> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = NegativeSampler::new(dataset, model, config.sampler, config.refresh_every)?;
    for epoch in 0..config.epochs {
        let loss = match objective {
            SgdObjective::Pointwise => {
                sgd_pointwise_epoch(model, dataset, &mut sampler, config, &mut rng)?
            }
            SgdObjective::Pairwise => {
                sgd_pairwise_epoch(model, dataset, &mut sampler, config, &mut rng)?
            }
            SgdObjective::SampledSoftmax => {
                sgd_sampled_softmax_epoch(model, dataset, &mut sampler, config, &mut rng)?
            }
        };
        on_epoch(epoch, loss);
    }
    Ok(())
}
