//! Adversarial paradigm: a categorical generator over perturbation
//! strategies, the discriminator's minimax loss and the alternating loop.
//!
//! The generator never produces pixels or free text. It picks a strategy
//! (one of the planted-inconsistency methods) and rewrites a consistent
//! pair with it, so every fake keeps exact labels and lineage.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{method_name, plant_inconsistency, World};
use crate::error::{Error, Result};
use crate::fccr::{labelled_loss, predict, LossWeights};
use crate::model::{ModelParams, ModelState};
use crate::optim::Adam;
use crate::types::{ContextDimension, EntityType, PairRecord, Target};

/// Every strategy the generator can choose, in a fixed order.
pub fn all_strategies() -> Vec<Target> {
    EntityType::LABELLED
        .iter()
        .map(|e| Target::Entity(*e))
        .chain(ContextDimension::ALL.iter().map(|d| Target::Dimension(*d)))
        .collect()
}

/// The target a strategy name rewrites.
pub fn strategy_target(name: &str) -> Option<Target> {
    all_strategies().into_iter().find(|t| method_name(*t) == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPolicy {
    pub strategy_weights: BTreeMap<String, f64>,
    /// Sampling uses `w^(1/temperature)`.
    pub temperature: f64,
    pub trainable: bool,
    /// Normalized weights never fall below this after an update.
    pub min_weight: f64,
}

impl Default for GeneratorPolicy {
    fn default() -> Self {
        let n = all_strategies().len() as f64;
        GeneratorPolicy {
            strategy_weights: all_strategies()
                .into_iter()
                .map(|t| (method_name(t).to_string(), 1.0 / n))
                .collect(),
            temperature: 1.0,
            trainable: true,
            min_weight: 0.02,
        }
    }
}

impl GeneratorPolicy {
    /// A policy that always picks `target`.
    pub fn concentrated(target: Target) -> Self {
        GeneratorPolicy {
            strategy_weights: [(method_name(target).to_string(), 1.0)].into_iter().collect(),
            trainable: false,
            ..GeneratorPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        let mut total = 0.0;
        for (name, w) in &self.strategy_weights {
            if strategy_target(name).is_none() {
                return Err(Error::Config(format!("unknown generator strategy `{name}`")));
            }
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("strategy `{name}` has weight {w}")));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::Config("strategy weights must sum to a positive value".into()));
        }
        if !(0.0..1.0).contains(&self.min_weight) {
            return Err(Error::Config(format!("min_weight {} outside [0, 1)", self.min_weight)));
        }
        Ok(())
    }

    /// Sampling distribution over the strategies accepted by `allowed`.
    pub fn distribution(&self, allowed: impl Fn(Target) -> bool) -> Vec<(String, f64)> {
        let tempered: Vec<(String, f64)> = self
            .strategy_weights
            .iter()
            .filter(|(name, w)| **w > 0.0 && strategy_target(name).is_some_and(&allowed))
            .map(|(name, w)| (name.clone(), w.powf(1.0 / self.temperature)))
            .collect();
        let total: f64 = tempered.iter().map(|(_, w)| w).sum();
        tempered.into_iter().map(|(n, w)| (n, w / total)).collect()
    }
}

/// Rewrites a consistent pair with a strategy drawn from `policy` among
/// those applicable to the pair's profile. The strategy name ends up in the
/// fake's `perturbation.method`.
pub fn generate_fake<R: Rng + ?Sized>(
    pair: &PairRecord,
    policy: &GeneratorPolicy,
    difficulty: f64,
    world: &World,
    rng: &mut R,
) -> Result<PairRecord> {
    if !pair.overall_consistent {
        return Err(Error::NotApplicable(format!("record `{}` is not consistent", pair.id)));
    }
    let applicable = pair.dataset_profile.applicable_targets();
    let dist = policy.distribution(|t| applicable.contains(&t));
    if dist.is_empty() {
        return Err(Error::NotApplicable(format!(
            "no generator strategy applies to record `{}` ({})",
            pair.id, pair.dataset_profile
        )));
    }
    let (name, _) = dist
        .choose_weighted(rng, |(_, p)| *p)
        .map_err(|e| Error::Config(format!("generator distribution: {e}")))?;
    let target = strategy_target(name).expect("distribution only holds known strategies");
    plant_inconsistency(pair, target, difficulty, world, rng)
}

#[derive(Debug, Clone)]
pub struct AdvBatch<'a> {
    pub real: Vec<&'a PairRecord>,
    pub fake: Vec<PairRecord>,
}

impl AdvBatch<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.real.is_empty() || self.fake.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(r) = self.real.iter().find(|r| !r.overall_consistent) {
            return Err(Error::Config(format!("real record `{}` is inconsistent", r.id)));
        }
        if let Some(f) = self.fake.iter().find(|f| f.overall_consistent || f.perturbation.is_none()) {
            return Err(Error::Config(format!("fake record `{}` lacks a planted inconsistency", f.id)));
        }
        Ok(())
    }
}

/// `-(mean_real log S + mean_fake log(1 - S))` with clipped scores, and its
/// gradient with respect to every parameter.
pub fn discriminator_loss<R: Rng + ?Sized>(
    batch: &AdvBatch,
    model: &ModelState,
    rng: &mut R,
) -> Result<(f64, ModelParams)> {
    batch.validate()?;
    let overall_only = LossWeights {
        overall: 1.0,
        dims: 0.0,
    };
    let mut grads = model.params.zeros_like();
    let fake: Vec<&PairRecord> = batch.fake.iter().collect();
    let loss = labelled_loss(&batch.real, model, overall_only, rng, &mut grads)?
        + labelled_loss(&fake, model, overall_only, rng, &mut grads)?;
    Ok((loss, grads))
}

/// Multiplies each strategy's weight by `exp(step · (mean S − 1/2))` over
/// the scores its fakes received, renormalizes and applies the weight floor.
pub fn generator_update(policy: &GeneratorPolicy, fake_scores: &[(String, f64)], step_size: f64) -> GeneratorPolicy {
    let mut out = policy.clone();
    if !policy.trainable || fake_scores.is_empty() {
        return out;
    }
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (name, s) in fake_scores {
        let e = sums.entry(name.as_str()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    for (name, (sum, n)) in sums {
        if let Some(w) = out.strategy_weights.get_mut(name) {
            *w *= (step_size * (sum / n as f64 - 0.5)).exp();
        }
    }
    normalize_with_floor(&mut out.strategy_weights, policy.min_weight);
    out
}

fn normalize_with_floor(weights: &mut BTreeMap<String, f64>, floor: f64) {
    let total: f64 = weights.values().sum();
    weights.values_mut().for_each(|w| *w /= total);
    let n = weights.len() as f64;
    let floor = floor.min(1.0 / n);
    if floor > 0.0 && weights.values().any(|w| *w < floor) {
        // Mix with the uniform distribution just enough to lift the minimum.
        let min = weights.values().copied().fold(f64::INFINITY, f64::min);
        let alpha = (floor - min) / (1.0 / n - min);
        weights.values_mut().for_each(|w| *w = (1.0 - alpha) * *w + alpha / n);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    /// Weight of the per-dimension supervised term over real and fake pairs.
    pub aux_weight: f64,
    /// Fakes draw their difficulty uniformly from this set.
    pub difficulties: Vec<f64>,
    /// Also use the corpus's own inconsistent training records as fakes.
    pub include_natural_fakes: bool,
    pub generator_step: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            aux_weight: 0.5,
            difficulties: vec![0.34, 0.67, 1.0],
            include_natural_fakes: false,
            generator_step: 1.0,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::Config(format!("aux_weight {} must be nonnegative", self.aux_weight)));
        }
        if self.difficulties.is_empty() || self.difficulties.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return Err(Error::Config(format!(
                "fake difficulties {:?} must be a nonempty subset of (0, 1]",
                self.difficulties
            )));
        }
        if !self.generator_step.is_finite() {
            return Err(Error::Config("generator_step must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvStepStats {
    pub d_loss: f64,
    pub aux_loss: f64,
    pub mean_real_score: f64,
    pub mean_fake_score: f64,
    pub grad_norm: f64,
}

/// Builds fakes for `real`, takes one discriminator step (plus the auxiliary
/// term) and one generator update.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_step<R: Rng + ?Sized>(
    real: &[&PairRecord],
    natural_fakes: &[&PairRecord],
    model: &mut ModelState,
    policy: &mut GeneratorPolicy,
    optimizer: &mut Adam,
    config: &AdvConfig,
    world: &World,
    rng: &mut R,
) -> Result<AdvStepStats> {
    let mut fake = Vec::with_capacity(real.len());
    for pair in real {
        let natural = config.include_natural_fakes && !natural_fakes.is_empty() && rng.random_bool(0.5);
        if natural {
            fake.push((*natural_fakes.choose(rng).expect("nonempty")).clone());
        } else {
            let difficulty = *config.difficulties.choose(rng).expect("validated");
            fake.push(generate_fake(pair, policy, difficulty, world, rng)?);
        }
    }
    let batch = AdvBatch {
        real: real.to_vec(),
        fake,
    };
    let (d_loss, mut grads) = discriminator_loss(&batch, model, rng)?;
    let mut aux_loss = 0.0;
    if config.aux_weight > 0.0 {
        let all: Vec<&PairRecord> = batch.real.iter().copied().chain(batch.fake.iter()).collect();
        aux_loss = labelled_loss(
            &all,
            model,
            LossWeights {
                overall: 0.0,
                dims: config.aux_weight,
            },
            rng,
            &mut grads,
        )?;
    }
    let grad_norm = grads.norm();
    if !grad_norm.is_finite() {
        return Err(Error::Divergence(format!("non-finite discriminator gradient (loss {d_loss})")));
    }
    optimizer.step(&mut model.params, &grads);

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let real_scores: Vec<f64> = batch
        .real
        .iter()
        .map(|r| predict(r, model).map(|s| s.overall))
        .collect::<Result<_>>()?;
    let fake_scored: Vec<(String, f64)> = batch
        .fake
        .iter()
        .map(|f| {
            let method = f.perturbation.as_ref().map(|p| p.method.clone()).unwrap_or_default();
            predict(f, model).map(|s| (method, s.overall))
        })
        .collect::<Result<_>>()?;
    *policy = generator_update(policy, &fake_scored, config.generator_step);
    let fake_scores: Vec<f64> = fake_scored.iter().map(|(_, s)| *s).collect();
    Ok(AdvStepStats {
        d_loss,
        aux_loss,
        mean_real_score: mean(&real_scores),
        mean_fake_score: mean(&fake_scores),
        grad_norm,
    })
}

/// One pass over the consistent training records in shuffled batches.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_epoch<R: Rng + ?Sized>(
    train: &[&PairRecord],
    batch_size: usize,
    model: &mut ModelState,
    policy: &mut GeneratorPolicy,
    optimizer: &mut Adam,
    config: &AdvConfig,
    world: &World,
    rng: &mut R,
) -> Result<Vec<AdvStepStats>> {
    let mut real: Vec<&PairRecord> = train.iter().copied().filter(|r| r.overall_consistent).collect();
    if real.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let natural: Vec<&PairRecord> = train.iter().copied().filter(|r| !r.overall_consistent).collect();
    real.shuffle(rng);
    real.chunks(batch_size.max(1))
        .map(|chunk| adversarial_step(chunk, &natural, model, policy, optimizer, config, world, rng))
        .collect()
}

/// Number of optimizer steps one adversarial epoch takes.
pub fn steps_per_epoch(train: &[&PairRecord], batch_size: usize) -> usize {
    train.iter().filter(|r| r.overall_consistent).count().div_ceil(batch_size.max(1))
}
