//! Multi-seed experiments: the component ablation and the paradigm and
//! robustness comparisons.
//!
//! Each seed generates its own corpus, split and perturbed test set; every
//! model trained for that seed sees the same data. Jobs are independent, so
//! they can run on several threads and are merged back in job order.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::split_corpus;
use crate::datagen::{add_perturbed_test_set, generate_corpus, World};
use crate::error::{Error, Result};
use crate::eval::{perturbed_eval_set, robustness_eval};
use crate::model::{ModelState, Variant};
use crate::train::{train, EpochStats, Paradigm};
use crate::types::{Corpus, PairRecord, Split};

/// Generated, split corpus with its perturbed test copies.
pub fn prepare_corpus(config: &RunConfig, world: &World, seed: u64) -> Result<Corpus> {
    let d = &config.data;
    let corpus = generate_corpus(&config.gen_config(seed), world)?;
    let corpus = split_corpus(&corpus, (d.train_fraction, d.val_fraction, d.test_fraction), seed)?;
    add_perturbed_test_set(&corpus, d.subtle_difficulty, world, seed)
}

/// Initializes and trains one model on the corpus's training split.
pub fn train_model(
    config: &RunConfig,
    corpus: &Corpus,
    world: &World,
    variant: Variant,
    paradigm: Paradigm,
    seed: u64,
) -> Result<(ModelState, Vec<EpochStats>)> {
    let mut model = config.init_model(variant, world, seed)?;
    let records: Vec<&PairRecord> = corpus.split(Split::Train).collect();
    let stats = train(&records, &mut model, &config.train_config(paradigm, seed), world)?;
    Ok((model, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoFccr,
    NoRlAdv,
    NoBoth,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoFccr,
        AblationVariant::NoRlAdv,
        AblationVariant::NoBoth,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoFccr => "w/o FCCR",
            AblationVariant::NoRlAdv => "w/o RL/Adv",
            AblationVariant::NoBoth => "w/o both",
        }
    }

    pub fn architecture(self) -> Variant {
        match self {
            AblationVariant::Full | AblationVariant::NoRlAdv => Variant::Full,
            AblationVariant::NoFccr | AblationVariant::NoBoth => Variant::NoFccr,
        }
    }

    /// `base` is the paradigm of the full model.
    pub fn paradigm(self, base: Paradigm) -> Paradigm {
        match self {
            AblationVariant::Full | AblationVariant::NoFccr => base,
            AblationVariant::NoRlAdv | AblationVariant::NoBoth => Paradigm::Supervised,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub standard_acc: f64,
    pub perturbed_acc: f64,
    pub drop: f64,
}

/// One row of a multi-seed comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub variant: Variant,
    pub paradigm: Paradigm,
    pub outcomes: Vec<SeedOutcome>,
    pub median_acc: f64,
    pub median_perturbed_acc: f64,
    pub median_drop: f64,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Job {
    row: usize,
    seed_index: usize,
    variant: Variant,
    paradigm: Paradigm,
}

/// Runs `f` over `0..n` on up to `workers` threads; results keep index order.
pub fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut guard = next.lock().expect("job counter");
                    let i = *guard;
                    *guard += 1;
                    i
                };
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("result slot") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

/// Trains and scores each `(name, variant, paradigm)` row on every seed.
pub fn compare(
    config: &RunConfig,
    rows: &[(String, Variant, Paradigm)],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<Summary>> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let world = config.world();
    let corpora: Vec<Result<Corpus>> =
        parallel_map(seeds.len(), workers, |i| prepare_corpus(config, &world, seeds[i]));
    let corpora: Vec<Corpus> = corpora.into_iter().collect::<Result<_>>()?;
    let jobs: Vec<Job> = (0..rows.len())
        .flat_map(|row| {
            (0..seeds.len()).map(move |seed_index| Job {
                row,
                seed_index,
                variant: rows[row].1,
                paradigm: rows[row].2,
            })
        })
        .collect();
    let threshold = config.eval.threshold;
    let outcomes = parallel_map(jobs.len(), workers, |i| -> Result<SeedOutcome> {
        let job = &jobs[i];
        let corpus = &corpora[job.seed_index];
        let seed = seeds[job.seed_index];
        let (model, _) = train_model(config, corpus, &world, job.variant, job.paradigm, seed)?;
        let standard: Vec<&PairRecord> = corpus.split(Split::Test).collect();
        let perturbed = perturbed_eval_set(corpus);
        let r = robustness_eval(&model, &standard, &perturbed, threshold)?;
        Ok(SeedOutcome {
            seed,
            standard_acc: r.standard_acc,
            perturbed_acc: r.perturbed_acc,
            drop: r.drop,
        })
    });
    let mut per_row: Vec<Vec<SeedOutcome>> = vec![Vec::new(); rows.len()];
    for (job, outcome) in jobs.iter().zip(outcomes) {
        per_row[job.row].push(outcome?);
    }
    Ok(rows
        .iter()
        .zip(per_row)
        .map(|((name, variant, paradigm), outcomes)| {
            let pick = |f: fn(&SeedOutcome) -> f64| median(&outcomes.iter().map(f).collect::<Vec<_>>());
            Summary {
                name: name.clone(),
                variant: *variant,
                paradigm: *paradigm,
                median_acc: pick(|o| o.standard_acc),
                median_perturbed_acc: pick(|o| o.perturbed_acc),
                median_drop: pick(|o| o.drop),
                outcomes,
            }
        })
        .collect())
}

/// The four-row component ablation. The full model uses the configured
/// paradigm, which must be `rl` or `adversarial`.
pub fn ablation(config: &RunConfig, seeds: &[u64], workers: usize) -> Result<Vec<Summary>> {
    let base = config.train.paradigm;
    if base == Paradigm::Supervised {
        return Err(Error::Config(
            "ablation needs train.paradigm = rl or adversarial for the full model".into(),
        ));
    }
    let rows: Vec<(String, Variant, Paradigm)> = AblationVariant::ALL
        .iter()
        .map(|v| (v.label().to_string(), v.architecture(), v.paradigm(base)))
        .collect();
    compare(config, &rows, seeds, workers)
}

/// The configured architecture under each paradigm.
pub fn paradigm_comparison(
    config: &RunConfig,
    paradigms: &[Paradigm],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<Summary>> {
    let rows: Vec<(String, Variant, Paradigm)> = paradigms
        .iter()
        .map(|p| (p.name().to_string(), config.variant(), *p))
        .collect();
    compare(config, &rows, seeds, workers)
}

/// Fixed-width text table of the medians with per-seed accuracies.
pub fn summary_table(rows: &[Summary]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>6}  per-seed accuracy\n",
        "variant", "accuracy", "perturbed", "drop"
    );
    for r in rows {
        let seeds: Vec<String> = r.outcomes.iter().map(|o| format!("{:.3}", o.standard_acc)).collect();
        out += &format!(
            "{:<width$}  {:>8.3}  {:>9.3}  {:>6.3}  {}\n",
            r.name,
            r.median_acc,
            r.median_perturbed_acc,
            r.median_drop,
            seeds.join(" ")
        );
    }
    out
}

pub fn summary_jsonl(rows: &[Summary]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("summary serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[0.7]), 0.7);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let serial = parallel_map(37, 1, |i| i * i);
        assert_eq!(parallel_map(37, 4, |i| i * i), serial);
        assert!(parallel_map(0, 3, |i| i).is_empty());
    }

    #[test]
    fn ablation_variants_map_to_components() {
        let p = Paradigm::Adversarial;
        let got: Vec<(Variant, Paradigm)> = AblationVariant::ALL.iter().map(|v| (v.architecture(), v.paradigm(p))).collect();
        assert_eq!(
            got,
            vec![
                (Variant::Full, Paradigm::Adversarial),
                (Variant::NoFccr, Paradigm::Adversarial),
                (Variant::Full, Paradigm::Supervised),
                (Variant::NoFccr, Paradigm::Supervised),
            ]
        );
    }

    #[test]
    fn supervised_base_is_rejected() {
        let mut c = RunConfig::default();
        c.train.paradigm = Paradigm::Supervised;
        assert!(matches!(ablation(&c, &[0], 1), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_comparison_is_deterministic_across_worker_counts() {
        let mut c = RunConfig::default();
        c.apply_preset("tiny").unwrap();
        c.data.n_consistent = 40;
        c.data.n_inconsistent = 40;
        c.train.epochs = 1;
        c.optim.lr = 1e-2;
        let rows = vec![
            ("a".to_string(), Variant::Full, Paradigm::Supervised),
            ("b".to_string(), Variant::NoFccr, Paradigm::Adversarial),
        ];
        let one = compare(&c, &rows, &[1, 2], 1).unwrap();
        let three = compare(&c, &rows, &[1, 2], 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one[0].outcomes.len(), 2);
        for o in &one[1].outcomes {
            assert!((0.0..=1.0).contains(&o.standard_acc));
            assert!((o.drop - (o.standard_acc - o.perturbed_acc)).abs() < 1e-12);
        }
    }
}
