//! Template grammar mapping scene attributes to token spans, its inverse
//! parser, and the event/zone compatibility table.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SceneDescriptor, VocabConfig};

/// Scene attributes in rendering order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Person,
    Location,
    Event,
    Sentiment,
    Narrative,
    Background,
    Time,
    Zone,
    /// The setting the text claims for the event; checked against the scene's
    /// zone and the compatibility table.
    Setting,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::Person,
        Attribute::Location,
        Attribute::Event,
        Attribute::Sentiment,
        Attribute::Narrative,
        Attribute::Background,
        Attribute::Time,
        Attribute::Zone,
        Attribute::Setting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn cardinality(self, vocab: &VocabConfig) -> u32 {
        match self {
            Attribute::Person => vocab.persons,
            Attribute::Location => vocab.locations,
            Attribute::Event => vocab.events,
            Attribute::Sentiment => vocab.sentiment_levels,
            Attribute::Narrative => vocab.narratives,
            Attribute::Background => vocab.backgrounds,
            Attribute::Time => vocab.time_periods,
            Attribute::Zone | Attribute::Setting => vocab.zones,
        }
    }

    /// The value a faithful description of `scene` renders for this attribute.
    pub fn scene_value(self, scene: &SceneDescriptor, vocab: &VocabConfig) -> u32 {
        match self {
            Attribute::Person => scene.person_id,
            Attribute::Location => scene.location_id,
            Attribute::Event => scene.event_id,
            Attribute::Sentiment => vocab.sentiment_level(scene.sentiment_polarity),
            Attribute::Narrative => scene.narrative_theme_id,
            Attribute::Background => scene.background_id,
            Attribute::Time => vocab.time_period(scene.time_slot),
            Attribute::Zone | Attribute::Setting => scene.spatial_zone_id,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Attribute::Person => "person",
            Attribute::Location => "location",
            Attribute::Event => "event",
            Attribute::Sentiment => "sentiment",
            Attribute::Narrative => "narrative",
            Attribute::Background => "background",
            Attribute::Time => "time",
            Attribute::Zone => "zone",
            Attribute::Setting => "setting",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenRole {
    Connective,
    Span {
        attribute: Attribute,
        value: u32,
        position: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct GrammarLine {
    attribute: String,
    value: u32,
    tokens: Vec<u32>,
}

/// Per-attribute token templates plus the connective placed between spans.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateGrammar {
    templates: BTreeMap<Attribute, Vec<Vec<u32>>>,
    connective: Vec<u32>,
    roles: HashMap<u32, TokenRole>,
    vocab_size: usize,
}

impl TemplateGrammar {
    /// Builds the default grammar: one connective token (id 0) followed by a
    /// contiguous block of `cardinality * span_len` ids per attribute.
    pub fn for_vocab(vocab: &VocabConfig) -> Self {
        let span = vocab.span_len as usize;
        let mut next = 1u32;
        let mut templates = BTreeMap::new();
        for attribute in Attribute::ALL {
            let values = (0..attribute.cardinality(vocab))
                .map(|_| {
                    let t: Vec<u32> = (next..next + span as u32).collect();
                    next += span as u32;
                    t
                })
                .collect();
            templates.insert(attribute, values);
        }
        Self::from_parts(templates, vec![0]).expect("default grammar is well formed")
    }

    fn from_parts(templates: BTreeMap<Attribute, Vec<Vec<u32>>>, connective: Vec<u32>) -> Result<Self> {
        let mut roles = HashMap::new();
        for &token in &connective {
            roles.insert(token, TokenRole::Connective);
        }
        for attribute in Attribute::ALL {
            let values = templates
                .get(&attribute)
                .ok_or_else(|| Error::Config(format!("grammar has no templates for {attribute}")))?;
            let span = values.first().map(Vec::len).unwrap_or(0);
            for (value, tokens) in values.iter().enumerate() {
                if tokens.is_empty() || tokens.len() != span {
                    return Err(Error::Config(format!(
                        "templates for {attribute} must share one nonzero length"
                    )));
                }
                for (position, &token) in tokens.iter().enumerate() {
                    let role = TokenRole::Span {
                        attribute,
                        value: value as u32,
                        position,
                    };
                    if roles.insert(token, role).is_some() {
                        return Err(Error::Config(format!(
                            "token {token} is used by more than one template position"
                        )));
                    }
                }
            }
        }
        let vocab_size = roles.keys().max().map(|m| *m as usize + 1).unwrap_or(0);
        Ok(TemplateGrammar {
            templates,
            connective,
            roles,
            vocab_size,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn template(&self, attribute: Attribute, value: u32) -> Option<&[u32]> {
        self.templates
            .get(&attribute)
            .and_then(|v| v.get(value as usize))
            .map(Vec::as_slice)
    }

    pub fn span_len(&self, attribute: Attribute) -> usize {
        self.templates[&attribute][0].len()
    }

    pub fn cardinality(&self, attribute: Attribute) -> u32 {
        self.templates[&attribute].len() as u32
    }

    /// Offset of each attribute's span inside a rendered sequence.
    pub fn span_start(&self, attribute: Attribute) -> usize {
        Attribute::ALL[..attribute.index()]
            .iter()
            .map(|a| self.span_len(*a) + self.connective.len())
            .sum()
    }

    /// Total length of every rendered sequence.
    pub fn text_len(&self) -> usize {
        let spans: usize = Attribute::ALL.iter().map(|a| self.span_len(*a)).sum();
        spans + self.connective.len() * (Attribute::ALL.len() - 1)
    }

    /// Concatenates the scene's attribute templates in canonical order.
    pub fn render(&self, scene: &SceneDescriptor, vocab: &VocabConfig) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(self.text_len());
        for (i, attribute) in Attribute::ALL.iter().enumerate() {
            if i > 0 {
                out.extend_from_slice(&self.connective);
            }
            let value = attribute.scene_value(scene, vocab);
            let tokens = self.template(*attribute, value).ok_or_else(|| {
                Error::NotApplicable(format!("{attribute} value {value} has no template"))
            })?;
            out.extend_from_slice(tokens);
        }
        Ok(out)
    }

    /// Recovers, for every attribute, the value each span position names.
    pub fn parse(&self, tokens: &[u32]) -> Result<ParsedText> {
        if tokens.len() != self.text_len() {
            return Err(Error::Shape(format!(
                "expected {} tokens, got {}",
                self.text_len(),
                tokens.len()
            )));
        }
        let mut values = BTreeMap::new();
        let mut cursor = 0;
        for (i, attribute) in Attribute::ALL.iter().enumerate() {
            if i > 0 {
                for _ in 0..self.connective.len() {
                    if self.roles.get(&tokens[cursor]) != Some(&TokenRole::Connective) {
                        return Err(Error::Parse {
                            line: 0,
                            message: format!("expected connective at position {cursor}"),
                        });
                    }
                    cursor += 1;
                }
            }
            let mut span_values = Vec::with_capacity(self.span_len(*attribute));
            for position in 0..self.span_len(*attribute) {
                match self.roles.get(&tokens[cursor]) {
                    Some(TokenRole::Span {
                        attribute: a,
                        value,
                        position: p,
                    }) if a == attribute && *p == position => span_values.push(*value),
                    _ => {
                        return Err(Error::Parse {
                            line: 0,
                            message: format!(
                                "token {} at position {cursor} is not {attribute}[{position}]",
                                tokens[cursor]
                            ),
                        })
                    }
                }
                cursor += 1;
            }
            values.insert(*attribute, span_values);
        }
        Ok(ParsedText { values })
    }

    /// Human-readable rendering of a token sequence.
    pub fn detokenize(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|t| match self.roles.get(t) {
                Some(TokenRole::Connective) => "and".to_string(),
                Some(TokenRole::Span {
                    attribute,
                    value,
                    position,
                }) => format!("{attribute}{value}{}", (b'a' + *position as u8) as char),
                None => format!("<{t}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        let conn = GrammarLine {
            attribute: "connective".into(),
            value: 0,
            tokens: self.connective.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&conn).expect("serializable"))?;
        for (attribute, values) in &self.templates {
            for (value, tokens) in values.iter().enumerate() {
                let line = GrammarLine {
                    attribute: attribute.label().into(),
                    value: value as u32,
                    tokens: tokens.clone(),
                };
                writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut connective = Vec::new();
        let mut raw: BTreeMap<Attribute, BTreeMap<u32, Vec<u32>>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GrammarLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if parsed.attribute == "connective" {
                connective = parsed.tokens;
                continue;
            }
            let attribute = Attribute::ALL
                .into_iter()
                .find(|a| a.label() == parsed.attribute)
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("unknown attribute `{}`", parsed.attribute),
                })?;
            raw.entry(attribute).or_default().insert(parsed.value, parsed.tokens);
        }
        let mut templates = BTreeMap::new();
        for (attribute, values) in raw {
            let n = values.len() as u32;
            if values.keys().copied().ne(0..n) {
                return Err(Error::Config(format!(
                    "values for {attribute} must be contiguous from 0"
                )));
            }
            templates.insert(attribute, values.into_values().collect());
        }
        Self::from_parts(templates, connective)
    }
}

/// Per-attribute values recovered from a token sequence, one per span position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedText {
    pub values: BTreeMap<Attribute, Vec<u32>>,
}

impl ParsedText {
    /// True when every position of the attribute's span names `value`.
    pub fn all_equal(&self, attribute: Attribute, value: u32) -> bool {
        self.values[&attribute].iter().all(|v| *v == value)
    }

    /// Attributes whose span names anything other than the scene's value.
    pub fn disagreements(&self, scene: &SceneDescriptor, vocab: &VocabConfig) -> Vec<Attribute> {
        Attribute::ALL
            .into_iter()
            .filter(|a| !self.all_equal(*a, a.scene_value(scene, vocab)))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CompatLine {
    event_id: u32,
    spatial_zone_id: u32,
    compatible: bool,
}

/// Which spatial zones are a logically coherent setting for each event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityTable {
    events: u32,
    zones: u32,
    compatible: Vec<bool>,
}

impl CompatibilityTable {
    /// Default table: with two or more zones, zone `event % zones` is the one
    /// incompatible setting of each event.
    pub fn for_vocab(vocab: &VocabConfig) -> Self {
        let (events, zones) = (vocab.events, vocab.zones);
        let compatible = (0..events)
            .flat_map(|e| (0..zones).map(move |z| zones < 2 || z != e % zones))
            .collect();
        CompatibilityTable {
            events,
            zones,
            compatible,
        }
    }

    pub fn is_compatible(&self, event: u32, zone: u32) -> bool {
        self.compatible[(event * self.zones + zone) as usize]
    }

    pub fn compatible_zones(&self, event: u32) -> Vec<u32> {
        (0..self.zones).filter(|z| self.is_compatible(event, *z)).collect()
    }

    pub fn incompatible_zones(&self, event: u32) -> Vec<u32> {
        (0..self.zones).filter(|z| !self.is_compatible(event, *z)).collect()
    }

    pub fn validate(&self, vocab: &VocabConfig) -> Result<()> {
        if self.events != vocab.events || self.zones != vocab.zones {
            return Err(Error::Config(format!(
                "compatibility table is {}x{}, vocabulary needs {}x{}",
                self.events, self.zones, vocab.events, vocab.zones
            )));
        }
        for e in 0..self.events {
            if self.compatible_zones(e).is_empty() {
                return Err(Error::Config(format!("event {e} has no compatible zone")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        for e in 0..self.events {
            for z in 0..self.zones {
                let line = CompatLine {
                    event_id: e,
                    spatial_zone_id: z,
                    compatible: self.is_compatible(e, z),
                };
                writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, vocab: &VocabConfig) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut table = CompatibilityTable {
            events: vocab.events,
            zones: vocab.zones,
            compatible: vec![true; (vocab.events * vocab.zones) as usize],
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CompatLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if parsed.event_id >= vocab.events || parsed.spatial_zone_id >= vocab.zones {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "event or zone outside vocabulary".into(),
                });
            }
            table.compatible[(parsed.event_id * vocab.zones + parsed.spatial_zone_id) as usize] =
                parsed.compatible;
        }
        table.validate(vocab)?;
        Ok(table)
    }
}
