//! Run configuration: every setting of a command in one tree, read from
//! line-based `dotted.key = value` files.
//!
//! Values are parsed as JSON when they parse, otherwise taken as strings, so
//! `train.paradigm = adversarial` and `data.vocab.persons = 4` both work.
//! Later assignments win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adv::{AdvConfig, GeneratorPolicy};
use crate::datagen::{GenConfig, World, SUBTLE_DIFFICULTY};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::model::{Dims, EncoderConfig, FccrConfig, ModelState, Variant};
use crate::optim::AdamConfig;
use crate::rl::RewardWeights;
use crate::train::{Paradigm, TrainConfig};
use crate::types::{DatasetProfile, VocabConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_consistent: usize,
    pub n_inconsistent: usize,
    pub profile_mix: BTreeMap<DatasetProfile, f64>,
    pub vocab: VocabConfig,
    pub difficulty: f64,
    pub subtle_difficulty: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        DataConfig {
            n_consistent: g.n_consistent,
            n_inconsistent: g.n_inconsistent,
            profile_mix: g.profile_mix,
            vocab: g.vocab,
            difficulty: g.difficulty,
            subtle_difficulty: SUBTLE_DIFFICULTY,
            train_fraction: 0.8,
            val_fraction: 0.0,
            test_fraction: 0.2,
        }
    }
}

/// Encoder widths; the vocabulary size and the init seed come from the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSettings {
    pub d_v: usize,
    pub d_t: usize,
    pub d_cm: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub paradigm: Paradigm,
    pub epochs: usize,
    pub batch_size: usize,
    pub dim_weight: f64,
    pub freeze_backbone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub threshold: f64,
    /// Seeds `ablate`, `robustness` and `paradigms` aggregate over; the
    /// run seed is the first.
    pub seeds: usize,
}

/// Inputs of `train`, `eval` and `serve`; unset means "the artifact of the
/// earlier command under the same output root".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSettings {
    pub addr: String,
    pub annotators: Vec<String>,
    /// Number of challenging pairs to put up for annotation.
    pub n: usize,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            addr: "127.0.0.1:8080".into(),
            annotators: (1..=5).map(|i| format!("ann{i}")).collect(),
            n: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub no_fccr: bool,
    pub data: DataConfig,
    pub encoder: EncoderSettings,
    pub fccr: FccrConfig,
    pub train: TrainSettings,
    pub optim: AdamConfig,
    pub reward: RewardWeights,
    pub policy: GeneratorPolicy,
    pub adv: AdvConfig,
    pub eval: EvalSettings,
    pub paths: PathSettings,
    pub serve: ServeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let mut c = RunConfig {
            seed: 0,
            no_fccr: false,
            data: DataConfig::default(),
            encoder: EncoderSettings {
                d_v: 0,
                d_t: 0,
                d_cm: 0,
                noise_std: 0.0,
            },
            fccr: FccrConfig {
                d_c: 0,
                d_f: 0,
                n_heads: 1,
                hidden: 0,
            },
            train: TrainSettings {
                paradigm: Paradigm::Adversarial,
                epochs: t.epochs,
                batch_size: t.batch_size,
                dim_weight: t.dim_weight,
                freeze_backbone: t.freeze_backbone,
            },
            optim: t.adam,
            reward: t.reward,
            policy: t.policy,
            adv: t.adv,
            eval: EvalSettings {
                threshold: DEFAULT_THRESHOLD,
                seeds: 5,
            },
            paths: PathSettings::default(),
            serve: ServeSettings::default(),
        };
        c.set_dims(Dims::TOY);
        c
    }
}

/// Named bundles of settings applied by `preset = NAME`.
pub const PRESETS: [&str; 4] = ["toy", "paper-scale", "tiny", "benchmark"];

impl RunConfig {
    pub fn set_dims(&mut self, d: Dims) {
        self.encoder.d_v = d.d_v;
        self.encoder.d_t = d.d_t;
        self.encoder.d_cm = d.d_cm;
        self.fccr = FccrConfig {
            d_c: d.d_c,
            d_f: d.d_f,
            n_heads: d.n_heads,
            hidden: d.hidden,
        };
    }

    /// Desk-scale setting of the ablation and robustness experiments:
    /// 2,000 training and 500 test pairs, a smaller attribute vocabulary,
    /// slightly wider encoders, fakes no harder to spot than the corpus's own
    /// inconsistencies and a learning rate suited to 40 short epochs.
    pub fn benchmark() -> Self {
        let mut c = RunConfig::default();
        c.apply_preset("benchmark").expect("known preset");
        c
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "toy" => self.set_dims(Dims::TOY),
            "paper-scale" => self.set_dims(Dims::PAPER_SCALE),
            "tiny" => self.set_dims(Dims::TINY),
            "benchmark" => {
                self.set_dims(Dims {
                    d_v: 24,
                    d_t: 24,
                    d_cm: 48,
                    ..Dims::TOY
                });
                self.data.n_consistent = 1250;
                self.data.n_inconsistent = 1250;
                self.data.difficulty = 0.7;
                self.data.vocab = VocabConfig {
                    persons: 5,
                    locations: 5,
                    events: 5,
                    narratives: 5,
                    backgrounds: 5,
                    zones: 5,
                    sentiment_levels: 3,
                    time_periods: 4,
                    span_len: 3,
                };
                self.adv.difficulties = vec![0.34, 0.67];
                self.train.epochs = 40;
                self.optim.lr = 1e-2;
                self.eval.seeds = 5;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies one `key = value` assignment. `preset` is a pseudo-key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        if key == "preset" {
            return self.apply_preset(value);
        }
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let Value::Object(map) = node else {
                return Err(Error::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))));
            };
            if i + 1 == parts.len() {
                // Map-valued sections (reward weights, profile mix) accept new keys.
                let is_map_section = i >= 1 && matches!(parts[i - 1], "lambda_k" | "strategy_weights" | "profile_mix");
                if !map.contains_key(*part) && !is_map_section {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
                map.insert(part.to_string(), parsed.clone());
                break;
            }
            node = map
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))?;
        Ok(())
    }

    /// Applies every assignment in `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every leaf as `key = value`, sorted by key. Feeding the output back
    /// through [`RunConfig::apply_text`] reproduces the config.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.sort();
        lines.into_iter().map(|l| l + "\n").collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        for f in [d.train_fraction, d.val_fraction, d.test_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("split fraction {f} is outside [0, 1]")));
            }
        }
        if (d.train_fraction + d.val_fraction + d.test_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        if !(d.subtle_difficulty > 0.0 && d.subtle_difficulty <= 1.0) {
            return Err(Error::Config("subtle_difficulty must lie in (0, 1]".into()));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::Config("eval.threshold must lie in (0, 1)".into()));
        }
        if self.eval.seeds == 0 {
            return Err(Error::Config("eval.seeds must be at least 1".into()));
        }
        self.gen_config(self.seed).validate()?;
        self.encoder_config(self.seed, 1).validate()?;
        self.fccr.validate(self.encoder.d_cm)?;
        self.train_config(self.train.paradigm, self.seed).validate()
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        let d = &self.data;
        GenConfig {
            n_consistent: d.n_consistent,
            n_inconsistent: d.n_inconsistent,
            profile_mix: d.profile_mix.clone(),
            vocab: d.vocab,
            difficulty: d.difficulty,
            subtle_difficulty: d.subtle_difficulty,
            seed,
        }
    }

    pub fn encoder_config(&self, seed: u64, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            d_v: self.encoder.d_v,
            d_t: self.encoder.d_t,
            d_cm: self.encoder.d_cm,
            vocab_size,
            noise_std: self.encoder.noise_std,
            seed,
        }
    }

    pub fn train_config(&self, paradigm: Paradigm, seed: u64) -> TrainConfig {
        TrainConfig {
            paradigm,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: self.optim,
            dim_weight: self.train.dim_weight,
            freeze_backbone: self.train.freeze_backbone,
            reward: self.reward.clone(),
            adv: self.adv.clone(),
            policy: self.policy.clone(),
            seed,
        }
    }

    pub fn variant(&self) -> Variant {
        if self.no_fccr {
            Variant::NoFccr
        } else {
            Variant::Full
        }
    }

    pub fn world(&self) -> World {
        World::new(self.data.vocab)
    }

    /// Freshly initialized model for `seed`.
    pub fn init_model(&self, variant: Variant, world: &World, seed: u64) -> Result<ModelState> {
        ModelState::new(
            self.encoder_config(seed, world.grammar.vocab_size()),
            self.fccr,
            self.data.vocab,
            variant,
        )
    }

    /// The seeds multi-seed commands run: `seed, seed + 1, ...`.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.eval.seeds as u64).map(|i| self.seed + i).collect()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Object(_) => out.push(format!("{prefix} = {}", Value::Object(Map::new()))),
        Value::String(s) => out.push(format!("{prefix} = {s}")),
        other => out.push(format!("{prefix} = {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::benchmark();
        c.set("reward.lambda_k.Narrative", "0.7").unwrap();
        c.set("train.paradigm", "rl").unwrap();
        c.set("paths.data", "some/corpus.jsonl").unwrap();
        c.set("serve.annotators", r#"["x", "y"]"#).unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn last_assignment_wins() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 3\n# comment\noptim.lr = 0.1\nseed = 7  # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.optim.lr, 0.1);
        c.apply_text("preset = paper-scale\nencoder.d_v = 12").unwrap();
        assert_eq!(c.encoder.d_v, 12);
        assert_eq!(c.fccr.d_c, 768);
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("optim.learning_rate", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("seed", "minus one"), Err(Error::Config(_))));
        assert!(matches!(c.set("preset", "huge"), Err(Error::Config(_))));
        assert!(matches!(c.set("seed.x", "1"), Err(Error::Config(_))));
        assert!(c.apply_text("no equals sign").is_err());
        c.set("optim.lr", "-1").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::benchmark().validate().unwrap();
    }
}
