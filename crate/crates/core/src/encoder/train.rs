use keyplan_tensor::{Adam, AdamConfig, Graph, ParamGrads, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::keys::key_step;
use crate::scene::Scene;

use super::config::EncoderConfig;
use super::model::{HeteroEncoder, SceneOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Scenes per optimizer step.
    pub batch_scenes: usize,
    pub max_grad_norm: f64,
    /// Learning rate at the last epoch relative to the first; cosine in between.
    pub final_lr_fraction: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 5e-4, batch_scenes: 8, max_grad_norm: 5.0, final_lr_fraction: 0.05 }
    }
}

impl EncoderTrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 0.0 };
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_scenes == 0 {
            return Err(Error::Validation("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Validation("learning rate and gradient clip must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Validation("final learning-rate fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub regression: f64,
    pub classification: f64,
    /// Mean best-mode error at the last key, metres.
    pub min_fde: f64,
}

/// Loss terms for one scene.
#[derive(Debug, Clone)]
pub struct SceneLoss {
    pub total: Var,
    pub regression: Var,
    pub classification: Var,
    /// Winning mode per agent.
    pub winners: Vec<usize>,
    /// Winner error at the last key per agent, metres.
    pub final_errors: Vec<f64>,
}

/// Ground-truth key positions of every agent in its own frame, one row per agent.
pub fn key_targets(scene: &Scene, config: &EncoderConfig, frames: &[(Vec2, f64)]) -> Result<Vec<Vec<Vec2>>> {
    scene
        .agents
        .iter()
        .zip(frames)
        .map(|(a, (origin, heading))| {
            let future = a
                .future_gt
                .as_ref()
                .ok_or_else(|| Error::Input(format!("agent {} has no ground-truth future", a.id)))?;
            config
                .key_timestamps
                .iter()
                .map(|t| {
                    let step = key_step(*t);
                    future
                        .get(step.wrapping_sub(1))
                        .map(|p| p.pos.to_frame(*origin, *heading))
                        .ok_or_else(|| Error::Input(format!("agent {}: future too short for key at {t} s", a.id)))
                })
                .collect()
        })
        .collect()
}

/// Winner-take-all loss: smooth-L1 on the winning mode's offsets (metres) plus
/// cross-entropy of the mode scores toward the winner. The winner is the mode
/// whose last key lies closest to the truth.
pub fn scene_loss(g: &mut Graph, config: &EncoderConfig, scene: &Scene, out: &SceneOutput) -> Result<SceneLoss> {
    let targets = key_targets(scene, config, &out.frames)?;
    let n = targets.len();
    let k = config.key_timestamps.len();
    let f = config.modes;
    let cols = f * k * 2;
    let offsets = g.value(out.offsets).clone();
    let mut target = Tensor::zeros(n, cols);
    let mut mask = Tensor::zeros(n, cols);
    let mut choice = Tensor::zeros(n, f);
    let mut winners = Vec::with_capacity(n);
    let mut final_errors = Vec::with_capacity(n);
    for (i, keys) in targets.iter().enumerate() {
        let last = keys[k - 1];
        let endpoint = |m: usize| {
            let c = (m * k + k - 1) * 2;
            Vec2::new(offsets.get(i, c), offsets.get(i, c + 1)) * config.offset_scale
        };
        let (best, err) =
            (0..f)
                .map(|m| (m, endpoint(m).distance(last)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        winners.push(best);
        final_errors.push(err);
        choice.set(i, best, 1.0);
        for m in 0..f {
            for (j, key) in keys.iter().enumerate() {
                let c = (m * k + j) * 2;
                target.set(i, c, key.x / config.offset_scale);
                target.set(i, c + 1, key.y / config.offset_scale);
                if m == best {
                    mask.set(i, c, 1.0);
                    mask.set(i, c + 1, 1.0);
                }
            }
        }
    }
    let target = g.constant(target);
    let mask = g.constant(mask);
    let choice = g.constant(choice);
    let diff = g.sub(out.offsets, target)?;
    let diff = g.scale(diff, config.offset_scale);
    let huber = g.smooth_l1(diff);
    let masked = g.mul(huber, mask)?;
    let regression = g.sum(masked);
    let regression = g.scale(regression, 1.0 / n as f64);
    let log_probs = g.log_softmax(out.logits);
    let picked = g.mul(log_probs, choice)?;
    let picked = g.sum(picked);
    let classification = g.scale(picked, -1.0 / n as f64);
    let total = g.add(regression, classification)?;
    Ok(SceneLoss { total, regression, classification, winners, final_errors })
}

/// Train a fresh encoder. Deterministic for a given seed.
pub fn train_encoder(
    scenes: &[Scene],
    config: EncoderConfig,
    train_config: &EncoderTrainConfig,
    seed: u64,
) -> Result<(HeteroEncoder, Vec<EpochLog>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = HeteroEncoder::new(config, &mut rng)?;
    let logs = fit(&mut encoder, scenes, train_config, &mut rng)?;
    Ok((encoder, logs))
}

/// Continue training an encoder in place.
pub fn fit(
    encoder: &mut HeteroEncoder,
    scenes: &[Scene],
    train_config: &EncoderTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochLog>> {
    train_config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut optimizer =
        Adam::new(AdamConfig { lr: train_config.learning_rate, ..AdamConfig::default() }, encoder.params());
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut logs = Vec::with_capacity(train_config.epochs);
    for epoch in 0..train_config.epochs {
        optimizer.config.lr = train_config.learning_rate_at(epoch);
        order.shuffle(rng);
        let (mut loss, mut reg, mut cls, mut fde, mut agents) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(train_config.batch_scenes) {
            let mut grads = ParamGrads::empty(encoder.params().len());
            for &s in batch {
                let scene = &scenes[s];
                let mut g = Graph::with_params(encoder.params());
                let out = encoder.forward(&mut g, scene)?;
                let parts = scene_loss(&mut g, encoder.config(), scene, &out)?;
                let total = g.value(parts.total).item();
                if !total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite encoder loss at epoch {epoch}, scene {s}")));
                }
                loss += total;
                reg += g.value(parts.regression).item();
                cls += g.value(parts.classification).item();
                fde += parts.final_errors.iter().sum::<f64>();
                agents += parts.final_errors.len();
                grads.accumulate(&g.backward(parts.total)?.param_grads());
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite encoder gradient at epoch {epoch}")));
            }
            grads.clip_global_norm(train_config.max_grad_norm);
            optimizer.step(encoder.params_mut(), &grads);
        }
        let m = scenes.len() as f64;
        logs.push(EpochLog {
            epoch,
            loss: loss / m,
            regression: reg / m,
            classification: cls / m,
            min_fde: fde / agents.max(1) as f64,
        });
    }
    Ok(logs)
}
