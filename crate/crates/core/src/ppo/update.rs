use std::sync::Arc;

use keyplan_tensor::{Adam, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::MOTION_FEATURES;
use crate::error::{Error, Result};

use super::buffer::{RolloutBuffer, Transition};
use super::policy::PolicyNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub minibatch: usize,
    /// Transitions collected per update.
    pub rollout: usize,
    pub buffer_capacity: usize,
    pub epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Distance within which a goal counts as reached at its deadline.
    pub goal_tolerance: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            gae_lambda: 0.97,
            clip: 0.2,
            learning_rate: 1e-4,
            minibatch: 1024,
            rollout: 512,
            buffer_capacity: 8092,
            epochs: 10,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            goal_tolerance: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::Validation("gamma and lambda must lie in (0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Validation("clip range and learning rate must be positive".into()));
        }
        if self.minibatch == 0 || self.rollout == 0 || self.epochs == 0 {
            return Err(Error::Validation("minibatch, rollout and epochs must be positive".into()));
        }
        if self.buffer_capacity < self.rollout {
            return Err(Error::Validation("buffer capacity must hold one rollout".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Graph pieces of the clipped objective for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    /// Per-sample probability ratio, n×1.
    pub ratio: Var,
    /// Clipped and unclipped surrogates, n×1 each.
    pub clipped: Var,
    pub unclipped: Var,
}

/// Group sample indices by shared lane context, in order of first appearance.
fn group_by_context(batch: &[&Transition]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, t) in batch.iter().enumerate() {
        match groups.iter_mut().find(|g| Arc::ptr_eq(&batch[g[0]].lanes, &t.lanes)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Build the PPO loss: clipped surrogate, value error and entropy bonus.
pub fn ppo_loss(
    g: &mut Graph,
    net: &PolicyNet,
    batch: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
) -> Result<LossVars> {
    let groups = group_by_context(batch);
    let order: Vec<usize> = groups.iter().flatten().copied().collect();
    let motions: Vec<Vec<[f64; MOTION_FEATURES]>> =
        groups.iter().map(|grp| grp.iter().map(|&i| batch[i].motion).collect()).collect();
    let inputs: Vec<_> = groups.iter().zip(&motions).map(|(grp, m)| (&*batch[grp[0]].lanes, m.as_slice())).collect();
    let out = net.forward(g, &inputs)?;

    let n = order.len();
    let column = |f: &dyn Fn(usize) -> f64| Tensor::column_vector(&order.iter().map(|&i| f(i)).collect::<Vec<_>>());
    let actions = Tensor::from_vec(n, 2, order.iter().flat_map(|&i| batch[i].action).collect())?;
    let actions = g.constant(actions);
    let old_log_prob = g.constant(column(&|i| batch[i].log_prob));
    let adv = g.constant(column(&|i| advantages[i]));
    let ret = g.constant(column(&|i| returns[i]));

    let log_prob = g.gaussian_log_prob(actions, out.mean, out.log_std)?;
    let diff = g.sub(log_prob, old_log_prob)?;
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv)?;
    let bounded = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let clipped = g.mul(bounded, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean(surrogate);
    let policy = g.neg(surrogate);

    let err = g.sub(out.value, ret)?;
    let sq = g.square(err);
    let value = g.mean(sq);

    // Differential entropy of a diagonal Gaussian.
    let per_dim = g.add_scalar(out.log_std, 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
    let entropy = g.sum(per_dim);

    let v_term = g.scale(value, config.value_coef);
    let e_term = g.scale(entropy, -config.entropy_coef);
    let total = g.add(policy, v_term)?;
    let total = g.add(total, e_term)?;
    Ok(LossVars { total, policy, value, entropy, ratio, clipped, unclipped })
}

/// Several epochs of clipped-surrogate minibatch updates over a finished buffer.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut PolicyNet,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if n == 0 || buffer.advantages().len() != n {
        return Err(Error::Contract("update needs a finished, non-empty buffer".into()));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut sums = UpdateStats::default();
    let mut batches = 0usize;
    let mut clipped_samples = 0usize;
    let mut samples = 0usize;
    for _ in 0..config.epochs {
        indices.shuffle(rng);
        for (b, chunk) in indices.chunks(config.minibatch).enumerate() {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &buffer.transitions()[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| buffer.advantages()[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| buffer.returns()[i]).collect();
            let mut grads = {
                let mut g = Graph::with_params(net.params());
                let loss = ppo_loss(&mut g, net, &batch, &adv, &ret, config)?;
                let total = g.value(loss.total).item();
                if !total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite PPO loss in minibatch {b}")));
                }
                sums.policy_loss += g.value(loss.policy).item();
                sums.value_loss += g.value(loss.value).item();
                sums.entropy += g.value(loss.entropy).item();
                clipped_samples +=
                    g.value(loss.ratio).data().iter().filter(|r| (**r - 1.0).abs() > config.clip).count();
                samples += batch.len();
                batches += 1;
                g.backward(loss.total)?.param_grads()
            };
            if !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite PPO gradient in minibatch {b}")));
            }
            grads.clip_global_norm(config.max_grad_norm);
            optimizer.step(net.params_mut(), &grads);
        }
    }
    let k = batches as f64;
    Ok(UpdateStats {
        policy_loss: sums.policy_loss / k,
        value_loss: sums.value_loss / k,
        entropy: sums.entropy / k,
        clip_fraction: clipped_samples as f64 / samples as f64,
    })
}
