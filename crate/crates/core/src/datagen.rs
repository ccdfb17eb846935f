//! Synthetic corpus generation with planted, lineage-tracked inconsistencies.
//!
//! Every label is true by construction: a consistent pair renders the scene's
//! own attribute values, and a planted inconsistency rewrites part of exactly
//! one attribute span of the text. The scene is never modified.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Attribute, CompatibilityTable, ParsedText, TemplateGrammar};
use crate::types::{
    ContextDimension, Corpus, DatasetProfile, EntityType, PairRecord, Perturbation,
    SceneDescriptor, Split, Target, VocabConfig,
};

/// Difficulty used for the subtly perturbed test set: about one token of a
/// three-token span.
pub const SUBTLE_DIFFICULTY: f64 = 0.34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_consistent: usize,
    pub n_inconsistent: usize,
    pub profile_mix: BTreeMap<DatasetProfile, f64>,
    pub vocab: VocabConfig,
    /// Fraction of a target span's tokens rewritten by a planted inconsistency.
    pub difficulty: f64,
    pub subtle_difficulty: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_consistent: 500,
            n_inconsistent: 500,
            profile_mix: DatasetProfile::ALL.iter().map(|p| (*p, 1.0 / 3.0)).collect(),
            vocab: VocabConfig::default(),
            difficulty: 0.7,
            subtle_difficulty: SUBTLE_DIFFICULTY,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate().map_err(Error::Config)?;
        if self.profile_mix.values().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config("profile fractions must be nonnegative".into()));
        }
        let total: f64 = self.profile_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "profile fractions must sum to 1, got {total}"
            )));
        }
        for d in [self.difficulty, self.subtle_difficulty] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("difficulty {d} outside (0, 1]")));
            }
        }
        if self.n_inconsistent > 0 && self.n_consistent == 0 {
            return Err(Error::Config(
                "inconsistent records need at least one consistent source".into(),
            ));
        }
        Ok(())
    }
}

/// Grammar, compatibility table and vocabulary bundled for generation.
#[derive(Debug, Clone)]
pub struct World {
    pub vocab: VocabConfig,
    pub grammar: TemplateGrammar,
    pub compat: CompatibilityTable,
}

impl World {
    pub fn new(vocab: VocabConfig) -> Self {
        World {
            vocab,
            grammar: TemplateGrammar::for_vocab(&vocab),
            compat: CompatibilityTable::for_vocab(&vocab),
        }
    }

    pub fn with_parts(
        vocab: VocabConfig,
        grammar: TemplateGrammar,
        compat: CompatibilityTable,
    ) -> Result<Self> {
        vocab.validate().map_err(Error::Config)?;
        compat.validate(&vocab)?;
        for attribute in Attribute::ALL {
            if grammar.cardinality(attribute) < attribute.cardinality(&vocab) {
                return Err(Error::Config(format!(
                    "grammar covers {} values of {attribute}, vocabulary needs {}",
                    grammar.cardinality(attribute),
                    attribute.cardinality(&vocab)
                )));
            }
        }
        Ok(World {
            vocab,
            grammar,
            compat,
        })
    }
}

/// Samples a coherent scene: attributes uniform, zone uniform among the
/// zones compatible with the sampled event.
pub fn generate_scene<R: Rng + ?Sized>(world: &World, rng: &mut R) -> SceneDescriptor {
    let v = &world.vocab;
    let person_id = rng.random_range(0..v.persons);
    let location_id = rng.random_range(0..v.locations);
    let event_id = rng.random_range(0..v.events);
    let sentiment_polarity = rng.random_range(-1.0..=1.0);
    let narrative_theme_id = rng.random_range(0..v.narratives);
    let background_id = rng.random_range(0..v.backgrounds);
    let time_slot = rng.random_range(0..24);
    let zones = world.compat.compatible_zones(event_id);
    let spatial_zone_id = *zones.choose(rng).expect("validated table");
    SceneDescriptor {
        person_id,
        location_id,
        event_id,
        sentiment_polarity,
        narrative_theme_id,
        background_id,
        time_slot,
        spatial_zone_id,
        coherence_flag: true,
    }
}

pub fn render_text(scene: &SceneDescriptor, world: &World) -> Result<Vec<u32>> {
    world.grammar.render(scene, &world.vocab)
}

/// Labels implied by comparing parsed text against the scene. Only the
/// dimensions annotated by `profile` are returned.
pub fn oracle_labels(
    scene: &SceneDescriptor,
    parsed: &ParsedText,
    profile: DatasetProfile,
    vocab: &VocabConfig,
) -> (BTreeMap<EntityType, bool>, BTreeMap<ContextDimension, bool>, bool) {
    let ok = |a: Attribute| parsed.all_equal(a, a.scene_value(scene, vocab));
    let entity: BTreeMap<EntityType, bool> = [
        (EntityType::PER, ok(Attribute::Person)),
        (EntityType::LOC, ok(Attribute::Location)),
        (EntityType::EVT, ok(Attribute::Event)),
    ]
    .into_iter()
    .collect();
    let ctxt: BTreeMap<ContextDimension, bool> = profile
        .dimensions()
        .iter()
        .map(|d| {
            let v = match d {
                ContextDimension::Sentiment => ok(Attribute::Sentiment),
                ContextDimension::Narrative => ok(Attribute::Narrative),
                ContextDimension::Background => ok(Attribute::Background),
                ContextDimension::TemporalSpatial => ok(Attribute::Time) && ok(Attribute::Zone),
                ContextDimension::LogicalCoherence => {
                    scene.coherence_flag && ok(Attribute::Setting)
                }
            };
            (*d, v)
        })
        .collect();
    let overall = entity.values().all(|v| *v) && ctxt.values().all(|v| *v);
    (entity, ctxt, overall)
}

/// Builds a fully consistent record for `scene`.
pub fn consistent_record(
    id: String,
    scene: SceneDescriptor,
    profile: DatasetProfile,
    world: &World,
) -> Result<PairRecord> {
    Ok(PairRecord {
        id,
        split: Split::Train,
        text_tokens: render_text(&scene, world)?,
        scene,
        entity_labels: EntityType::LABELLED.iter().map(|e| (*e, true)).collect(),
        ctxt_labels: profile.dimensions().iter().map(|d| (*d, true)).collect(),
        overall_consistent: true,
        dataset_profile: profile,
        perturbation: None,
    })
}

/// Name of the perturbation method used for each target; doubles as the
/// adversarial generator's strategy name.
pub fn method_name(target: Target) -> &'static str {
    match target {
        Target::Entity(EntityType::PER) => "per_swap",
        Target::Entity(EntityType::LOC) => "loc_swap",
        Target::Entity(EntityType::EVT) => "evt_swap",
        Target::Entity(EntityType::CTXT) => "ctxt",
        Target::Dimension(ContextDimension::Sentiment) => "sentiment_antonym",
        Target::Dimension(ContextDimension::Narrative) => "narrative_swap",
        Target::Dimension(ContextDimension::Background) => "background_swap",
        Target::Dimension(ContextDimension::TemporalSpatial) => "temporal_spatial_shift",
        Target::Dimension(ContextDimension::LogicalCoherence) => "incoherent_setting",
    }
}

/// Number of span positions rewritten at a given difficulty.
pub fn changed_positions(span_len: usize, difficulty: f64) -> usize {
    ((difficulty * span_len as f64).round() as usize).clamp(1, span_len)
}

fn other_value<R: Rng + ?Sized>(current: u32, cardinality: u32, rng: &mut R) -> Option<u32> {
    if cardinality < 2 {
        return None;
    }
    let shift = rng.random_range(1..cardinality);
    Some((current + shift) % cardinality)
}

/// Picks the attribute to rewrite and the value it will claim instead.
fn choose_rewrite<R: Rng + ?Sized>(
    scene: &SceneDescriptor,
    target: Target,
    world: &World,
    rng: &mut R,
) -> Result<(Attribute, u32)> {
    let vocab = &world.vocab;
    let simple = |attribute: Attribute, rng: &mut R| {
        other_value(
            attribute.scene_value(scene, vocab),
            attribute.cardinality(vocab),
            rng,
        )
        .map(|v| (attribute, v))
    };
    let chosen = match target {
        Target::Entity(EntityType::PER) => simple(Attribute::Person, rng),
        Target::Entity(EntityType::LOC) => simple(Attribute::Location, rng),
        Target::Entity(EntityType::EVT) => simple(Attribute::Event, rng),
        Target::Entity(EntityType::CTXT) => None,
        Target::Dimension(ContextDimension::Sentiment) => {
            let levels = vocab.sentiment_levels;
            let level = vocab.sentiment_level(scene.sentiment_polarity);
            let mirrored = levels - 1 - level;
            if levels < 2 {
                None
            } else if mirrored != level {
                Some((Attribute::Sentiment, mirrored))
            } else {
                let choices: Vec<u32> = (0..levels).filter(|l| *l != level).collect();
                choices.choose(rng).map(|v| (Attribute::Sentiment, *v))
            }
        }
        Target::Dimension(ContextDimension::Narrative) => simple(Attribute::Narrative, rng),
        Target::Dimension(ContextDimension::Background) => simple(Attribute::Background, rng),
        Target::Dimension(ContextDimension::TemporalSpatial) => {
            let mut options = Vec::new();
            if vocab.time_periods >= 2 {
                options.push(Attribute::Time);
            }
            if vocab.zones >= 2 {
                options.push(Attribute::Zone);
            }
            match options.choose(rng) {
                Some(a) => simple(*a, rng),
                None => None,
            }
        }
        Target::Dimension(ContextDimension::LogicalCoherence) => {
            let zones: Vec<u32> = world
                .compat
                .incompatible_zones(scene.event_id)
                .into_iter()
                .filter(|z| *z != scene.spatial_zone_id)
                .collect();
            zones.choose(rng).map(|z| (Attribute::Setting, *z))
        }
    };
    chosen.ok_or_else(|| Error::NotApplicable(format!("no alternative value exists for {target}")))
}

/// Rewrites part of one attribute span so that exactly `target`'s label
/// becomes false. The returned record keeps the source's scene and split;
/// its id is `<source>/<method>`.
pub fn plant_inconsistency<R: Rng + ?Sized>(
    record: &PairRecord,
    target: Target,
    difficulty: f64,
    world: &World,
    rng: &mut R,
) -> Result<PairRecord> {
    if !record.overall_consistent {
        return Err(Error::NotApplicable(format!(
            "record `{}` is already inconsistent",
            record.id
        )));
    }
    if !record.dataset_profile.applicable_targets().contains(&target) {
        return Err(Error::NotApplicable(format!(
            "{target} is not annotated by profile {}",
            record.dataset_profile
        )));
    }
    if !(difficulty > 0.0 && difficulty <= 1.0) {
        return Err(Error::Config(format!("difficulty {difficulty} outside (0, 1]")));
    }

    let (attribute, value) = choose_rewrite(&record.scene, target, world, rng)?;
    let replacement = world
        .grammar
        .template(attribute, value)
        .ok_or_else(|| Error::NotApplicable(format!("{attribute} value {value} has no template")))?;
    let span = replacement.len();
    let start = world.grammar.span_start(attribute);
    let mut positions: Vec<usize> = (0..span).collect();
    positions.shuffle(rng);
    let mut tokens = record.text_tokens.clone();
    for &p in positions.iter().take(changed_positions(span, difficulty)) {
        tokens[start + p] = replacement[p];
    }

    let mut out = record.clone();
    out.id = format!("{}/{}", record.id, method_name(target));
    out.text_tokens = tokens;
    match target {
        Target::Entity(e) => {
            out.entity_labels.insert(e, false);
        }
        Target::Dimension(d) => {
            out.ctxt_labels.insert(d, false);
        }
    }
    out.overall_consistent = false;
    out.perturbation = Some(Perturbation {
        source_id: record.id.clone(),
        dimension: target,
        method: method_name(target).to_string(),
    });
    Ok(out)
}

fn profile_counts(n: usize, mix: &BTreeMap<DatasetProfile, f64>) -> Vec<(DatasetProfile, usize)> {
    let mut counts: Vec<(DatasetProfile, usize)> = DatasetProfile::ALL
        .iter()
        .map(|p| (*p, (n as f64 * mix.get(p).copied().unwrap_or(0.0)).floor() as usize))
        .collect();
    let mut remainder = n - counts.iter().map(|(_, c)| c).sum::<usize>();
    let eligible: Vec<usize> = (0..counts.len())
        .filter(|i| mix.get(&counts[*i].0).copied().unwrap_or(0.0) > 0.0)
        .collect();
    let mut k = 0;
    while remainder > 0 {
        counts[eligible[k % eligible.len()]].1 += 1;
        remainder -= 1;
        k += 1;
    }
    counts
}

/// `n_consistent` consistent records followed by `n_inconsistent` planted
/// ones, each derived from a uniformly chosen consistent source.
pub fn generate_corpus(config: &GenConfig, world: &World) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut profiles: Vec<DatasetProfile> = profile_counts(config.n_consistent, &config.profile_mix)
        .into_iter()
        .flat_map(|(p, c)| std::iter::repeat_n(p, c))
        .collect();
    profiles.shuffle(&mut rng);

    let mut records = Vec::with_capacity(config.n_consistent + config.n_inconsistent);
    for (i, profile) in profiles.into_iter().enumerate() {
        let scene = generate_scene(world, &mut rng);
        records.push(consistent_record(format!("c{i:06}"), scene, profile, world)?);
    }
    for j in 0..config.n_inconsistent {
        let source = &records[rng.random_range(0..config.n_consistent)];
        let targets = source.dataset_profile.applicable_targets();
        let target = *targets.choose(&mut rng).expect("entities are always applicable");
        let mut planted = plant_inconsistency(source, target, config.difficulty, world, &mut rng)?;
        planted.id = format!("i{j:06}");
        records.push(planted);
    }
    Ok(Corpus {
        records,
        vocab_config: config.vocab,
        seed: config.seed,
    })
}

/// Turns a consistent test record into a hard negative: one target chosen
/// uniformly among the applicable ones, rewritten at `difficulty`.
pub fn perturb_subtle<R: Rng + ?Sized>(
    record: &PairRecord,
    difficulty: f64,
    world: &World,
    rng: &mut R,
) -> Result<PairRecord> {
    if record.split != Split::Test {
        return Err(Error::NotApplicable(format!(
            "record `{}` is not in the test split",
            record.id
        )));
    }
    let targets = record.dataset_profile.applicable_targets();
    let target = *targets.choose(rng).expect("entities are always applicable");
    let mut out = plant_inconsistency(record, target, difficulty, world, rng)?;
    out.id = format!("p-{}", record.id);
    out.split = Split::PerturbedTest;
    Ok(out)
}

/// Appends a subtly perturbed copy of every consistent test record.
pub fn add_perturbed_test_set(corpus: &Corpus, difficulty: f64, world: &World, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for record in corpus.records.iter().filter(|r| r.split == Split::Test && r.overall_consistent) {
        out.records.push(perturb_subtle(record, difficulty, world, &mut rng)?);
    }
    Ok(out)
}
