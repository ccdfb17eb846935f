//! Training driver shared by the three paradigms.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adv::{adversarial_epoch, steps_per_epoch, AdvConfig, GeneratorPolicy};
use crate::datagen::World;
use crate::error::{Error, Result};
use crate::fccr::supervised_loss;
use crate::model::ModelState;
use crate::optim::{Adam, AdamConfig};
use crate::rl::{reinforce_step, RewardWeights};
use crate::types::PairRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Supervised,
    Rl,
    Adversarial,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Supervised, Paradigm::Rl, Paradigm::Adversarial];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Supervised => "supervised",
            Paradigm::Rl => "rl",
            Paradigm::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown paradigm `{s}` (supervised, rl, adversarial)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the per-dimension term of the supervised objective.
    pub dim_weight: f64,
    /// Keep the encoder weights at their initial values.
    pub freeze_backbone: bool,
    pub reward: RewardWeights,
    pub adv: AdvConfig,
    pub policy: GeneratorPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            paradigm: Paradigm::Supervised,
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            dim_weight: 1.0,
            freeze_backbone: false,
            reward: RewardWeights::default(),
            adv: AdvConfig::default(),
            policy: GeneratorPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", a.lr)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) || !(0.0..=1.0).contains(&a.warmup_fraction) {
            return Err(Error::Config("Adam eps must be positive and warmup_fraction in [0, 1]".into()));
        }
        if !(self.dim_weight >= 0.0 && self.dim_weight.is_finite()) {
            return Err(Error::Config(format!("dim_weight {} must be nonnegative", self.dim_weight)));
        }
        self.reward.validate()?;
        self.adv.validate()?;
        self.policy.validate()
    }
}

/// Per-epoch summary. Fields that do not apply to the paradigm are omitted
/// from the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub paradigm: Paradigm,
    pub steps: usize,
    pub loss: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_real_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_fake_score: Option<f64>,
}

impl EpochStats {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_finite(value: f64, what: &str, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} became {value} in epoch {epoch}")))
    }
}

/// Trains `model` in place on `train` and returns one stats entry per epoch.
/// Everything is determined by the config (including its seed) and the
/// record order.
pub fn train(
    train: &[&PairRecord],
    model: &mut ModelState,
    config: &TrainConfig,
    world: &World,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_epoch = match config.paradigm {
        Paradigm::Adversarial => steps_per_epoch(train, config.batch_size),
        _ => train.len().div_ceil(config.batch_size),
    };
    if per_epoch == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut optimizer = Adam::new(&model.params, config.adam, (per_epoch * config.epochs) as u64);
    if config.freeze_backbone {
        optimizer.freeze("encoder.");
    }
    let mut policy = config.policy.clone();
    let mut baseline = 0.0;
    let mut order: Vec<&PairRecord> = train.to_vec();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let stats = match config.paradigm {
            Paradigm::Supervised => {
                order.shuffle(&mut rng);
                let mut losses = Vec::new();
                let mut norms = Vec::new();
                for batch in order.chunks(config.batch_size) {
                    let (loss, grads) = supervised_loss(batch, model, config.dim_weight, &mut rng)?;
                    check_finite(loss, "supervised loss", epoch)?;
                    let norm = grads.norm();
                    check_finite(norm, "gradient norm", epoch)?;
                    optimizer.step(&mut model.params, &grads);
                    losses.push(loss);
                    norms.push(norm);
                }
                EpochStats {
                    epoch,
                    paradigm: config.paradigm,
                    steps: losses.len(),
                    loss: mean(losses.into_iter()),
                    grad_norm: mean(norms.into_iter()),
                    mean_reward: None,
                    baseline: None,
                    aux_loss: None,
                    mean_real_score: None,
                    mean_fake_score: None,
                }
            }
            Paradigm::Rl => {
                order.shuffle(&mut rng);
                let mut steps = Vec::new();
                for batch in order.chunks(config.batch_size) {
                    steps.push(reinforce_step(
                        batch,
                        model,
                        &config.reward,
                        &mut baseline,
                        &mut optimizer,
                        &mut rng,
                    )?);
                }
                let mean_reward = mean(steps.iter().map(|s| s.mean_reward));
                EpochStats {
                    epoch,
                    paradigm: config.paradigm,
                    steps: steps.len(),
                    loss: -mean_reward,
                    grad_norm: mean(steps.iter().map(|s| s.grad_norm)),
                    mean_reward: Some(mean_reward),
                    baseline: Some(baseline),
                    aux_loss: None,
                    mean_real_score: None,
                    mean_fake_score: None,
                }
            }
            Paradigm::Adversarial => {
                let steps = adversarial_epoch(
                    train,
                    config.batch_size,
                    model,
                    &mut policy,
                    &mut optimizer,
                    &config.adv,
                    world,
                    &mut rng,
                )?;
                let loss = mean(steps.iter().map(|s| s.d_loss));
                check_finite(loss, "discriminator loss", epoch)?;
                EpochStats {
                    epoch,
                    paradigm: config.paradigm,
                    steps: steps.len(),
                    loss,
                    grad_norm: mean(steps.iter().map(|s| s.grad_norm)),
                    mean_reward: None,
                    baseline: None,
                    aux_loss: Some(mean(steps.iter().map(|s| s.aux_loss))),
                    mean_real_score: Some(mean(steps.iter().map(|s| s.mean_real_score))),
                    mean_fake_score: Some(mean(steps.iter().map(|s| s.mean_fake_score))),
                }
            }
        };
        if !model.params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        history.push(stats);
    }
    Ok(history)
}
