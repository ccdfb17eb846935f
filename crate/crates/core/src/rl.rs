//! Policy-gradient paradigm: the gated multi-faceted reward, Bernoulli action
//! sampling from the verdict scores, and a REINFORCE step with a moving
//! average baseline.
//!
//! Each pair is a single-step episode. The action has one overall component
//! and one component per annotated dimension, all sampled independently with
//! the corresponding score as the probability of "consistent".

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::record_rng;
use crate::error::{Error, Result};
use crate::fccr::{backward, forward_traced};
use crate::model::{ModelParams, ModelState};
use crate::optim::Adam;
use crate::types::{ContextDimension, PairRecord};

/// Decay of the exponential moving-average reward baseline.
pub const BASELINE_DECAY: f64 = 0.99;

/// Upper limit on enumerated action components (2^20 profiles).
pub const MAX_ENUMERATED_COMPONENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda0: f64,
    pub lambda_k: BTreeMap<ContextDimension, f64>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights::uniform(1.0, 0.2)
    }
}

impl RewardWeights {
    pub fn uniform(lambda0: f64, lambda_k: f64) -> Self {
        RewardWeights {
            lambda0,
            lambda_k: ContextDimension::ALL.iter().map(|d| (*d, lambda_k)).collect(),
        }
    }

    pub fn weight(&self, dim: ContextDimension) -> f64 {
        self.lambda_k.get(&dim).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.lambda0).chain(self.lambda_k.values().copied());
        let mut any_positive = false;
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("reward weight {w} must be nonnegative")));
            }
            any_positive |= w > 0.0;
        }
        if !any_positive {
            return Err(Error::Config("at least one reward weight must be positive".into()));
        }
        Ok(())
    }

    /// Largest attainable reward on a record annotating `dims`.
    pub fn max_reward(&self, dims: &[ContextDimension]) -> f64 {
        self.lambda0 + dims.iter().map(|d| self.weight(*d)).sum::<f64>()
    }
}

/// A verdict: `true` means "consistent".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionProfile {
    pub overall: bool,
    pub per_dimension: BTreeMap<ContextDimension, bool>,
}

/// `λ0·[overall correct] + Σ_k λ_k·[a_k correct]·[overall correct]` over
/// the record's annotated dimensions.
pub fn reward(action: &ActionProfile, truth: &PairRecord, w: &RewardWeights) -> Result<f64> {
    if !action.per_dimension.keys().eq(truth.ctxt_labels.keys()) {
        return Err(Error::Shape(format!(
            "action covers {:?}, record `{}` annotates {:?}",
            action.per_dimension.keys().collect::<Vec<_>>(),
            truth.id,
            truth.ctxt_labels.keys().collect::<Vec<_>>()
        )));
    }
    let overall_correct = action.overall == truth.overall_consistent;
    if !overall_correct {
        return Ok(0.0);
    }
    let bonus: f64 = action
        .per_dimension
        .iter()
        .filter(|(dim, a)| truth.ctxt_labels[dim] == **a)
        .map(|(dim, _)| w.weight(*dim))
        .sum();
    Ok(w.lambda0 + bonus)
}

/// Probabilities of "consistent" for every action component: the overall
/// score first, then one per annotated dimension in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentProbs {
    pub overall: f64,
    pub dims: Vec<(ContextDimension, f64)>,
}

impl ComponentProbs {
    pub fn new(overall: f64, per_dimension: &BTreeMap<ContextDimension, f64>, annotated: &[ContextDimension]) -> Self {
        ComponentProbs {
            overall,
            dims: annotated.iter().map(|d| (*d, per_dimension[d])).collect(),
        }
    }
}

fn ln_choice(p: f64, chosen: bool) -> f64 {
    if chosen {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Samples each component independently; returns the action and the sum of
/// the chosen branches' log-probabilities.
pub fn sample_action<R: Rng + ?Sized>(probs: &ComponentProbs, rng: &mut R) -> (ActionProfile, f64) {
    let overall = rng.random::<f64>() < probs.overall;
    let mut log_prob = ln_choice(probs.overall, overall);
    let mut per_dimension = BTreeMap::new();
    for (dim, p) in &probs.dims {
        let a = rng.random::<f64>() < *p;
        log_prob += ln_choice(*p, a);
        per_dimension.insert(*dim, a);
    }
    (ActionProfile { overall, per_dimension }, log_prob)
}

/// Exact expected reward and its gradient with respect to each component's
/// logit (overall first), by enumerating every action profile.
pub fn exact_expected_reward(
    probs: &ComponentProbs,
    truth: &PairRecord,
    w: &RewardWeights,
) -> Result<(f64, Vec<f64>)> {
    let n = 1 + probs.dims.len();
    if n > MAX_ENUMERATED_COMPONENTS {
        return Err(Error::NotApplicable(format!("{n} components are too many to enumerate")));
    }
    let ps: Vec<f64> = std::iter::once(probs.overall).chain(probs.dims.iter().map(|(_, p)| *p)).collect();
    let mut expected = 0.0;
    let mut grad = vec![0.0; n];
    for mask in 0u32..(1 << n) {
        let bits: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let prob: f64 = ps
            .iter()
            .zip(&bits)
            .map(|(p, b)| if *b { *p } else { 1.0 - p })
            .product();
        let action = ActionProfile {
            overall: bits[0],
            per_dimension: probs.dims.iter().zip(&bits[1..]).map(|((d, _), b)| (*d, *b)).collect(),
        };
        let r = reward(&action, truth, w)?;
        expected += prob * r;
        // d log p(a) / d logit_i = a_i - p_i
        for i in 0..n {
            let a = if bits[i] { 1.0 } else { 0.0 };
            grad[i] += prob * r * (a - ps[i]);
        }
    }
    Ok((expected, grad))
}

/// Expected reward of `model` on `record`, scores from the record's own
/// noise stream.
pub fn model_expected_reward(model: &ModelState, record: &PairRecord, w: &RewardWeights) -> Result<f64> {
    let scores = crate::fccr::predict(record, model)?;
    let probs = ComponentProbs::new(scores.overall, &scores.per_dimension, &record.annotated_dimensions());
    Ok(exact_expected_reward(&probs, record, w)?.0)
}

/// Expected reward on `record` and its exact gradient with respect to every
/// parameter: enumeration at the component logits, then backpropagation.
pub fn exact_parameter_gradient(
    model: &ModelState,
    record: &PairRecord,
    w: &RewardWeights,
) -> Result<(f64, ModelParams)> {
    let mut rng = record_rng(model.encoder.seed, &record.id);
    let trace = forward_traced(record, model, &mut rng)?;
    let scores = trace.scores();
    let probs = ComponentProbs::new(scores.overall, &scores.per_dimension, &record.annotated_dimensions());
    let (expected, g) = exact_expected_reward(&probs, record, w)?;
    let mut d_dims = [0.0; 5];
    for ((dim, _), gk) in probs.dims.iter().zip(&g[1..]) {
        d_dims[dim.index()] = *gk;
    }
    let mut grads = model.params.zeros_like();
    backward(&trace, g[0], &d_dims, model, &mut grads);
    Ok((expected, grads))
}

/// Score-function gradient estimate `(R - b) ∇ log π(a)` with respect to the
/// component logits, overall first.
pub fn logit_gradient(action: &ActionProfile, probs: &ComponentProbs, advantage: f64) -> Vec<f64> {
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    std::iter::once(advantage * (bit(action.overall) - probs.overall))
        .chain(
            probs
                .dims
                .iter()
                .map(|(d, p)| advantage * (bit(action.per_dimension[d]) - p)),
        )
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RlStepStats {
    pub mean_reward: f64,
    pub baseline: f64,
    pub grad_norm: f64,
}

/// Gradient of the batch objective `mean (R - b) log π(a)` with respect to
/// every parameter, plus the mean reward.
pub fn reinforce_gradient<R: Rng + ?Sized>(
    batch: &[&PairRecord],
    model: &ModelState,
    w: &RewardWeights,
    baseline: f64,
    rng: &mut R,
) -> Result<(ModelParams, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = model.params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut total_reward = 0.0;
    for record in batch {
        let trace = forward_traced(record, model, rng)?;
        let scores = trace.scores();
        let probs = ComponentProbs::new(scores.overall, &scores.per_dimension, &record.annotated_dimensions());
        let (action, _) = sample_action(&probs, rng);
        let r = reward(&action, record, w)?;
        total_reward += r;
        let g = logit_gradient(&action, &probs, r - baseline);
        let mut d_dims = [0.0; 5];
        for ((dim, _), gk) in probs.dims.iter().zip(&g[1..]) {
            d_dims[dim.index()] = scale * gk;
        }
        backward(&trace, scale * g[0], &d_dims, model, &mut grads);
    }
    Ok((grads, total_reward * scale))
}

/// One REINFORCE update: estimate the gradient, take an ascent step with
/// `optimizer` and move the baseline towards the batch mean reward.
pub fn reinforce_step<R: Rng + ?Sized>(
    batch: &[&PairRecord],
    model: &mut ModelState,
    w: &RewardWeights,
    baseline: &mut f64,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<RlStepStats> {
    let (mut grads, mean_reward) = reinforce_gradient(batch, model, w, *baseline, rng)?;
    let grad_norm = grads.norm();
    if !grad_norm.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite policy gradient (mean reward {mean_reward}, baseline {baseline})"
        )));
    }
    // Adam minimizes; ascend on the objective by descending on its negation.
    grads.scale(-1.0);
    optimizer.step(&mut model.params, &grads);
    *baseline = BASELINE_DECAY * *baseline + (1.0 - BASELINE_DECAY) * mean_reward;
    Ok(RlStepStats {
        mean_reward,
        baseline: *baseline,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DatasetProfile, EntityType, SceneDescriptor, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn truth_all_dims(overall: bool, dims: [bool; 5]) -> PairRecord {
        PairRecord {
            id: "t".into(),
            split: Split::Train,
            scene: SceneDescriptor {
                person_id: 0,
                location_id: 0,
                event_id: 0,
                sentiment_polarity: 0.0,
                narrative_theme_id: 0,
                background_id: 0,
                time_slot: 0,
                spatial_zone_id: 0,
                coherence_flag: true,
            },
            text_tokens: vec![],
            entity_labels: EntityType::LABELLED.iter().map(|e| (*e, true)).collect(),
            ctxt_labels: ContextDimension::ALL.iter().copied().zip(dims).collect(),
            overall_consistent: overall,
            dataset_profile: DatasetProfile::MMGEnt,
            perturbation: None,
        }
    }

    fn action(overall: bool, dims: [bool; 5]) -> ActionProfile {
        ActionProfile {
            overall,
            per_dimension: ContextDimension::ALL.iter().copied().zip(dims).collect(),
        }
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::uniform(1.0, 0.2);
        let truth = truth_all_dims(true, [true; 5]);
        assert!((reward(&action(true, [true; 5]), &truth, &w).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(reward(&action(false, [true; 5]), &truth, &w).unwrap(), 0.0);
        let two = action(true, [true, true, false, false, false]);
        assert!((reward(&two, &truth, &w).unwrap() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn reward_rejects_mismatched_keys() {
        let w = RewardWeights::default();
        let mut truth = truth_all_dims(true, [true; 5]);
        truth.ctxt_labels.remove(&ContextDimension::Narrative);
        assert!(reward(&action(true, [true; 5]), &truth, &w).is_err());
    }

    #[test]
    fn reward_weight_validation() {
        assert!(RewardWeights::uniform(0.0, 0.0).validate().is_err());
        assert!(RewardWeights::uniform(-1.0, 1.0).validate().is_err());
        assert!(RewardWeights::uniform(0.0, 0.1).validate().is_ok());
    }

    #[test]
    fn near_certain_scores_sample_all_consistent() {
        let p = 1.0 - 1e-9;
        let probs = ComponentProbs {
            overall: p,
            dims: ContextDimension::ALL.iter().map(|d| (*d, p)).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (a, lp) = sample_action(&probs, &mut rng);
            assert!(a.overall && a.per_dimension.values().all(|v| *v));
            assert!(lp.exp() >= 1.0 - 6e-9);
        }
    }

    #[test]
    fn log_probability_matches_direct_computation() {
        let probs = ComponentProbs {
            overall: 0.3,
            dims: vec![(ContextDimension::Sentiment, 0.8), (ContextDimension::Narrative, 0.45)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (a, lp) = sample_action(&probs, &mut rng);
            let pick = |p: f64, b: bool| if b { p } else { 1.0 - p };
            let direct = pick(0.3, a.overall)
                * pick(0.8, a.per_dimension[&ContextDimension::Sentiment])
                * pick(0.45, a.per_dimension[&ContextDimension::Narrative]);
            assert!((lp - direct.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn overall_frequency_matches_score() {
        let probs = ComponentProbs {
            overall: 0.3,
            dims: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_action(&probs, &mut rng).0.overall).count();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.005);
    }

    #[test]
    fn expected_reward_closed_forms() {
        let truth = truth_all_dims(true, [true; 5]);
        let half = ComponentProbs {
            overall: 0.5,
            dims: ContextDimension::ALL.iter().map(|d| (*d, 0.5)).collect(),
        };
        let (e, _) = exact_expected_reward(&half, &truth, &RewardWeights::uniform(1.0, 0.0)).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
        let (e, _) = exact_expected_reward(&half, &truth, &RewardWeights::uniform(1.0, 0.2)).unwrap();
        assert!((e - 0.75).abs() < 1e-12);
    }

    #[test]
    fn expected_reward_matches_monte_carlo() {
        let truth = truth_all_dims(false, [true, false, true, true, false]);
        let w = RewardWeights::uniform(1.0, 0.2);
        let probs = ComponentProbs {
            overall: 0.37,
            dims: ContextDimension::ALL
                .iter()
                .zip([0.9, 0.2, 0.55, 0.7, 0.33])
                .map(|(d, p)| (*d, p))
                .collect(),
        };
        let (exact, _) = exact_expected_reward(&probs, &truth, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let r = reward(&sample_action(&probs, &mut rng).0, &truth, &w).unwrap();
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn reward_bounds_and_unannotated_invariance() {
        let w = RewardWeights::uniform(1.0, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let dims: [bool; 5] = std::array::from_fn(|_| rng.random());
            let overall = rng.random();
            let truth = truth_all_dims(overall, dims);
            let a = action(rng.random(), std::array::from_fn(|_| rng.random()));
            let r = reward(&a, &truth, &w).unwrap();
            assert!(r >= 0.0 && r <= w.max_reward(&ContextDimension::ALL));
            if a.overall != truth.overall_consistent {
                assert_eq!(r, 0.0);
            }
        }
        // Weights of dimensions the record does not annotate never matter.
        let mut truth = truth_all_dims(true, [true; 5]);
        truth.ctxt_labels.retain(|d, _| *d == ContextDimension::Sentiment);
        let a = ActionProfile {
            overall: true,
            per_dimension: [(ContextDimension::Sentiment, true)].into_iter().collect(),
        };
        let mut heavy = w.clone();
        heavy.lambda_k.insert(ContextDimension::LogicalCoherence, 50.0);
        assert_eq!(reward(&a, &truth, &w).unwrap(), reward(&a, &truth, &heavy).unwrap());
    }

    #[test]
    fn too_many_components_cannot_be_enumerated() {
        let truth = truth_all_dims(true, [true; 5]);
        let probs = ComponentProbs {
            overall: 0.5,
            dims: (0..25).map(|_| (ContextDimension::Sentiment, 0.5)).collect(),
        };
        assert!(exact_expected_reward(&probs, &truth, &RewardWeights::default()).is_err());
    }

    #[test]
    fn score_function_estimate_is_unbiased() {
        let truth = truth_all_dims(true, [false, true, true, false, true]);
        let w = RewardWeights::uniform(1.0, 0.2);
        let probs = ComponentProbs {
            overall: 0.62,
            dims: ContextDimension::ALL
                .iter()
                .zip([0.4, 0.75, 0.5, 0.1, 0.88])
                .map(|(d, p)| (*d, p))
                .collect(),
        };
        let (_, exact) = exact_expected_reward(&probs, &truth, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 50_000;
        let baseline = 0.7;
        let mut sum = vec![0.0; 6];
        let mut sum_sq = vec![0.0; 6];
        for _ in 0..n {
            let (a, _) = sample_action(&probs, &mut rng);
            let r = reward(&a, &truth, &w).unwrap();
            for (i, g) in logit_gradient(&a, &probs, r - baseline).into_iter().enumerate() {
                sum[i] += g;
                sum_sq[i] += g * g;
            }
        }
        for i in 0..6 {
            let mean = sum[i] / n as f64;
            let se = ((sum_sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se, "component {i}: {mean} vs {}", exact[i]);
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences_of_expected_reward() {
        let truth = truth_all_dims(false, [true, false, false, true, true]);
        let w = RewardWeights::uniform(1.0, 0.3);
        let logits = [0.3, -1.2, 0.8, 0.1, -0.4, 2.0];
        let probs_at = |l: &[f64]| ComponentProbs {
            overall: crate::tensor::sigmoid(l[0]),
            dims: ContextDimension::ALL
                .iter()
                .zip(&l[1..])
                .map(|(d, x)| (*d, crate::tensor::sigmoid(*x)))
                .collect(),
        };
        let (_, grad) = exact_expected_reward(&probs_at(&logits), &truth, &w).unwrap();
        for i in 0..6 {
            let mut up = logits;
            let mut down = logits;
            up[i] += 1e-5;
            down[i] -= 1e-5;
            let fd = (exact_expected_reward(&probs_at(&up), &truth, &w).unwrap().0
                - exact_expected_reward(&probs_at(&down), &truth, &w).unwrap().0)
                / 2e-5;
            assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
        }
    }

    fn tiny_setup() -> (ModelState, Vec<PairRecord>) {
        let mut c = crate::config::RunConfig::default();
        c.apply_preset("tiny").unwrap();
        let world = c.world();
        let mut g = c.gen_config(4);
        g.n_consistent = 12;
        g.n_inconsistent = 12;
        let records = crate::datagen::generate_corpus(&g, &world).unwrap().records;
        (c.init_model(crate::model::Variant::Full, &world, 4).unwrap(), records)
    }

    #[test]
    fn zero_reward_leaves_parameters_unchanged() {
        let (mut m, records) = tiny_setup();
        let before = m.params.clone();
        let batch: Vec<&PairRecord> = records.iter().take(8).collect();
        let w = RewardWeights::uniform(0.0, 0.0);
        let mut opt = Adam::new(&m.params, crate::optim::AdamConfig { lr: 1e-2, ..Default::default() }, 10);
        let mut baseline = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, mean) = reinforce_gradient(&batch, &m, &w, 0.0, &mut rng).unwrap();
        assert_eq!((g.norm(), mean), (0.0, 0.0));
        let stats = reinforce_step(&batch, &mut m, &w, &mut baseline, &mut opt, &mut rng).unwrap();
        assert_eq!(stats.grad_norm, 0.0);
        assert_eq!(m.params, before);
    }

    #[test]
    fn small_step_does_not_decrease_expected_reward() {
        let (mut m, records) = tiny_setup();
        let w = RewardWeights::default();
        for record in records.iter().take(6) {
            let (before, exact) = exact_parameter_gradient(&m, record, &w).unwrap();
            assert!(exact.norm() > 1e-3);
            let batch: Vec<&PairRecord> = vec![record; 256];
            let mut opt = Adam::new(
                &m.params,
                crate::optim::AdamConfig { lr: 1e-4, warmup_fraction: 0.0, ..Default::default() },
                1,
            );
            let mut baseline = 0.0;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let saved = m.params.clone();
            reinforce_step(&batch, &mut m, &w, &mut baseline, &mut opt, &mut rng).unwrap();
            let after = model_expected_reward(&m, record, &w).unwrap();
            assert!(after >= before - 1e-6, "{}: {before} -> {after}", record.id);
            m.params = saved;
        }
    }

    #[test]
    fn oracle_perfect_policy_earns_the_maximum() {
        use crate::eval::{OraclePredictor, Predictor};
        let w = RewardWeights::uniform(1.0, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truths = [
            truth_all_dims(true, [true; 5]),
            truth_all_dims(false, [true, false, true, true, false]),
        ];
        for truth in &truths {
            let scores = OraclePredictor.scores(truth).unwrap();
            let probs = ComponentProbs::new(scores.overall, &scores.per_dimension, &truth.annotated_dimensions());
            let n = 10_000;
            let total: f64 = (0..n)
                .map(|_| reward(&sample_action(&probs, &mut rng).0, truth, &w).unwrap())
                .sum();
            assert!((total / n as f64 - w.max_reward(&truth.annotated_dimensions())).abs() < 1e-3);
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (m, records) = tiny_setup();
        let w = RewardWeights::default();
        let record = &records[3];
        let (_, exact) = exact_parameter_gradient(&m, record, &w).unwrap();
        let report = crate::gradcheck::check_params(
            &m,
            &exact,
            |mm| model_expected_reward(mm, record, &w).unwrap(),
            &crate::gradcheck::GradCheck::default(),
            |_| true,
        );
        assert!(report.passed(), "{report}");
    }
}
