//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the five fine-grained contextual dimensions.
///
/// The declaration order is the canonical order; every ordered iteration
/// (parameter layout, report columns, serialized maps) follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContextDimension {
    Sentiment,
    Narrative,
    Background,
    TemporalSpatial,
    LogicalCoherence,
}

impl ContextDimension {
    pub const ALL: [ContextDimension; 5] = [
        ContextDimension::Sentiment,
        ContextDimension::Narrative,
        ContextDimension::Background,
        ContextDimension::TemporalSpatial,
        ContextDimension::LogicalCoherence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower-case identifier used in parameter paths and strategy names.
    pub fn slug(self) -> &'static str {
        match self {
            ContextDimension::Sentiment => "sentiment",
            ContextDimension::Narrative => "narrative",
            ContextDimension::Background => "background",
            ContextDimension::TemporalSpatial => "temporal_spatial",
            ContextDimension::LogicalCoherence => "logical_coherence",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextDimension::Sentiment => "Sentiment",
            ContextDimension::Narrative => "Narrative",
            ContextDimension::Background => "Background",
            ContextDimension::TemporalSpatial => "TemporalSpatial",
            ContextDimension::LogicalCoherence => "LogicalCoherence",
        }
    }
}

impl fmt::Display for ContextDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity-level label types. `CTXT` aggregates the five [`ContextDimension`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    PER,
    LOC,
    EVT,
    CTXT,
}

impl EntityType {
    /// Entity types that carry their own label on a record (everything but CTXT).
    pub const LABELLED: [EntityType; 3] = [EntityType::PER, EntityType::LOC, EntityType::EVT];

    pub fn name(self) -> &'static str {
        match self {
            EntityType::PER => "PER",
            EntityType::LOC => "LOC",
            EntityType::EVT => "EVT",
            EntityType::CTXT => "CTXT",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a planted inconsistency targets: an entity or a contextual dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Entity(EntityType),
    Dimension(ContextDimension),
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Entity(e) => e.name(),
            Target::Dimension(d) => d.name(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(d) = ContextDimension::ALL.iter().find(|d| d.name() == s) {
            return Ok(Target::Dimension(*d));
        }
        match s {
            "PER" => Ok(Target::Entity(EntityType::PER)),
            "LOC" => Ok(Target::Entity(EntityType::LOC)),
            "EVT" => Ok(Target::Entity(EntityType::EVT)),
            "CTXT" => Ok(Target::Entity(EntityType::CTXT)),
            other => Err(format!("unknown perturbation target `{other}`")),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    PerturbedTest,
}

/// Annotation mask emulating one of the three source datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetProfile {
    TamperedNewsEnt,
    News400Ent,
    MMGEnt,
}

impl DatasetProfile {
    pub const ALL: [DatasetProfile; 3] = [
        DatasetProfile::TamperedNewsEnt,
        DatasetProfile::News400Ent,
        DatasetProfile::MMGEnt,
    ];

    /// Context dimensions this profile annotates.
    pub fn dimensions(self) -> &'static [ContextDimension] {
        match self {
            DatasetProfile::TamperedNewsEnt => {
                &[ContextDimension::Sentiment, ContextDimension::Narrative]
            }
            DatasetProfile::News400Ent => {
                &[ContextDimension::Background, ContextDimension::TemporalSpatial]
            }
            DatasetProfile::MMGEnt => &[ContextDimension::LogicalCoherence],
        }
    }

    pub fn annotates(self, dim: ContextDimension) -> bool {
        self.dimensions().contains(&dim)
    }

    /// Every target a planted inconsistency may hit on a record of this profile.
    pub fn applicable_targets(self) -> Vec<Target> {
        EntityType::LABELLED
            .iter()
            .map(|e| Target::Entity(*e))
            .chain(self.dimensions().iter().map(|d| Target::Dimension(*d)))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetProfile::TamperedNewsEnt => "TamperedNewsEnt",
            DatasetProfile::News400Ent => "News400Ent",
            DatasetProfile::MMGEnt => "MMGEnt",
        }
    }
}

impl fmt::Display for DatasetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth content of the "image" side of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub person_id: u32,
    pub location_id: u32,
    pub event_id: u32,
    pub sentiment_polarity: f64,
    pub narrative_theme_id: u32,
    pub background_id: u32,
    pub time_slot: u32,
    pub spatial_zone_id: u32,
    pub coherence_flag: bool,
}

/// Lineage of a planted inconsistency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub source_id: String,
    pub dimension: Target,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub split: Split,
    pub scene: SceneDescriptor,
    pub text_tokens: Vec<u32>,
    pub entity_labels: BTreeMap<EntityType, bool>,
    pub ctxt_labels: BTreeMap<ContextDimension, bool>,
    pub overall_consistent: bool,
    pub dataset_profile: DatasetProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl PairRecord {
    /// Context dimensions carrying a label on this record, in canonical order.
    pub fn annotated_dimensions(&self) -> Vec<ContextDimension> {
        self.ctxt_labels.keys().copied().collect()
    }

    /// Conjunction of every present label.
    pub fn labels_conjunction(&self) -> bool {
        self.entity_labels.values().all(|v| *v) && self.ctxt_labels.values().all(|v| *v)
    }

    pub fn label_for(&self, target: Target) -> Option<bool> {
        match target {
            Target::Entity(EntityType::CTXT) => {
                if self.ctxt_labels.is_empty() {
                    None
                } else {
                    Some(self.ctxt_labels.values().all(|v| *v))
                }
            }
            Target::Entity(e) => self.entity_labels.get(&e).copied(),
            Target::Dimension(d) => self.ctxt_labels.get(&d).copied(),
        }
    }
}

/// Vocabulary sizes for every scene attribute rendered into text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub persons: u32,
    pub locations: u32,
    pub events: u32,
    pub narratives: u32,
    pub backgrounds: u32,
    pub zones: u32,
    pub sentiment_levels: u32,
    pub time_periods: u32,
    /// Tokens per attribute value template.
    pub span_len: u32,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            persons: 6,
            locations: 6,
            events: 6,
            narratives: 4,
            backgrounds: 4,
            zones: 4,
            sentiment_levels: 3,
            time_periods: 4,
            span_len: 3,
        }
    }
}

impl VocabConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("persons", self.persons),
            ("locations", self.locations),
            ("events", self.events),
            ("narratives", self.narratives),
            ("backgrounds", self.backgrounds),
            ("zones", self.zones),
            ("sentiment_levels", self.sentiment_levels),
            ("time_periods", self.time_periods),
            ("span_len", self.span_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(format!("vocabulary size `{name}` must be at least 1"));
            }
        }
        if 24 % self.time_periods != 0 {
            return Err(format!(
                "time_periods must divide 24, got {}",
                self.time_periods
            ));
        }
        Ok(())
    }

    /// Sentiment bucket a polarity in [-1, 1] falls into.
    pub fn sentiment_level(&self, polarity: f64) -> u32 {
        let scaled = ((polarity + 1.0) / 2.0 * self.sentiment_levels as f64).floor();
        (scaled.max(0.0) as u32).min(self.sentiment_levels - 1)
    }

    pub fn time_period(&self, time_slot: u32) -> u32 {
        time_slot / (24 / self.time_periods)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<PairRecord>,
    pub vocab_config: VocabConfig,
    pub seed: u64,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&PairRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_dimension_order() {
        let idx: Vec<usize> = ContextDimension::ALL.iter().map(|d| d.index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        let mut sorted = ContextDimension::ALL;
        sorted.sort();
        assert_eq!(sorted, ContextDimension::ALL);
    }

    #[test]
    fn target_string_round_trip() {
        for t in ContextDimension::ALL
            .iter()
            .map(|d| Target::Dimension(*d))
            .chain(EntityType::LABELLED.iter().map(|e| Target::Entity(*e)))
        {
            assert_eq!(t.name().parse::<Target>().unwrap(), t);
        }
        assert!("Mood".parse::<Target>().is_err());
    }

    #[test]
    fn sentiment_buckets_cover_closed_interval() {
        let v = VocabConfig::default();
        assert_eq!(v.sentiment_level(-1.0), 0);
        assert_eq!(v.sentiment_level(0.0), 1);
        assert_eq!(v.sentiment_level(1.0), 2);
        assert_eq!(v.time_period(0), 0);
        assert_eq!(v.time_period(23), 3);
    }
}
