use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RefinerNet, RoutingStats};
use crate::error::{invalid, shape_err, Error, Result};
use crate::priors::PriorTensor;
use crate::scene::Radiomap;
use crate::tensor::{AdamState, Graph, ParamStore, Tensor};

/// One training scene: network input, the base map the residual is added
/// to, and the ground truth.
#[derive(Clone, Debug)]
pub struct RefinerSample {
    pub input: Tensor,
    pub base: Tensor,
    pub truth: Tensor,
}

impl RefinerSample {
    pub fn new(prior: &PriorTensor, base: &Radiomap, truth: &Radiomap) -> Result<Self> {
        if !base.same_grid(truth) || prior.height != truth.height() || prior.width != truth.width() {
            return shape_err("prior, base and truth must share one grid");
        }
        let shape = [truth.bands(), truth.height(), truth.width()];
        Ok(RefinerSample {
            input: prior.to_tensor(),
            base: Tensor::new(shape, base.values().to_vec())?,
            truth: Tensor::new(shape, truth.values().to_vec())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the expert load-balance term; zero disables it.
    pub balance_coef: f64,
    pub seed: u64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        RefinerTrainConfig { epochs: 12, lr: 2e-3, balance_coef: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training objective over the epoch's steps.
    pub train_loss: f64,
    /// Mean clamped-estimate MSE on the validation scenes (NaN without any).
    pub val_mse: f64,
    /// Routing counters per sparse block, summed over the epoch.
    pub routing: Vec<RoutingStats>,
}

#[derive(Clone, Debug)]
pub struct TrainedRefiner {
    /// Parameters from the epoch with the lowest validation error.
    pub net: RefinerNet,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

fn sample_loss(net: &RefinerNet, g: &mut Graph, store: &ParamStore, s: &RefinerSample, coef: f64) -> Result<(crate::tensor::Var, Vec<RoutingStats>)> {
    let x = g.constant(s.input.clone());
    let pass = net.forward_with(g, store, x)?;
    let base = g.constant(s.base.clone());
    let truth = g.constant(s.truth.clone());
    let est = g.add(base, pass.residual)?;
    let mut loss = g.mse(est, truth)?;
    if coef > 0.0 {
        if let Some(aux) = pass.aux {
            let aux = g.scale(aux, coef);
            loss = g.add(loss, aux)?;
        }
    }
    Ok((loss, pass.stats))
}

/// Mean squared error of the clamped estimates over `samples`.
pub fn evaluate_refiner(net: &RefinerNet, samples: &[RefinerSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let x = g.constant(s.input.clone());
        let pass = net.forward(&mut g, x)?;
        let r = g.value(pass.residual).data();
        let se: f64 = r
            .iter()
            .zip(s.base.data())
            .zip(s.truth.data())
            .map(|((r, b), t)| ((b + r).clamp(0.0, 1.0) - t).powi(2))
            .sum();
        total += se / r.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Adam with one scene per step, scenes reshuffled every epoch. The
/// returned network is the one with the lowest validation error (the last
/// one when `val` is empty).
pub fn train_refiner(
    mut net: RefinerNet,
    train: &[RefinerSample],
    val: &[RefinerSample],
    cfg: &RefinerTrainConfig,
) -> Result<TrainedRefiner> {
    if train.is_empty() {
        return invalid("refiner training needs at least one scene");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, net.params().clone());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut routing: Vec<RoutingStats> = Vec::new();
        for &i in &order {
            let mut g = Graph::new();
            let (loss, stats) = sample_loss(&net, &mut g, net.params(), &train[i], cfg.balance_coef)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { stage: "refiner", epoch });
            }
            total += value;
            if routing.is_empty() {
                routing = stats;
            } else {
                routing.iter_mut().zip(&stats).for_each(|(a, b)| a.merge(b));
            }
            net.params_mut().zero_grad();
            g.backward(loss)?;
            g.accumulate_into(net.params_mut());
            adam.step(net.params_mut()).map_err(|_| Error::Diverged { stage: "refiner", epoch })?;
        }
        let val_mse = evaluate_refiner(&net, val)?;
        let score = if val.is_empty() { -(epoch as f64) } else { val_mse };
        if score < best.0 {
            best = (score, epoch, net.params().clone());
        }
        logs.push(EpochLog { epoch, train_loss: total / train.len() as f64, val_mse, routing });
    }
    let best_epoch = if cfg.epochs == 0 { 0 } else { best.1 };
    if cfg.epochs > 0 {
        *net.params_mut() = best.2;
    }
    Ok(TrainedRefiner { net, best_epoch, logs })
}

/// `epoch,block,expert,token_fraction,mean_gate` rows.
pub fn write_routing_csv(out: &mut impl Write, logs: &[EpochLog]) -> Result<()> {
    writeln!(out, "epoch,block,expert,token_fraction,mean_gate")?;
    for log in logs {
        for (b, stats) in log.routing.iter().enumerate() {
            for (e, (f, m)) in stats.token_fraction().iter().zip(stats.mean_gate()).enumerate() {
                writeln!(out, "{},{b},{e},{f:.6},{m:.6}", log.epoch)?;
            }
        }
    }
    Ok(())
}
