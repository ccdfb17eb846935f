//! Annotation tasks and the selection of challenging pairs.

use std::collections::BTreeMap;

use contextguard_core::datagen::World;
use contextguard_core::types::{PairRecord, SceneDescriptor};
use serde::{Deserialize, Serialize};

use crate::service::ServiceError;

/// Judgments required before a task counts as done.
pub const REQUIRED_JUDGMENTS: usize = 5;

/// Default number of challenging pairs.
pub const DEFAULT_CHALLENGING: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub pair_id: String,
    pub display_text: String,
    pub scene_summary: String,
    pub status: TaskStatus,
    pub required_judgments: usize,
}

impl AnnotationTask {
    pub fn for_record(record: &PairRecord, world: &World) -> Self {
        AnnotationTask {
            pair_id: record.id.clone(),
            display_text: world.grammar.detokenize(&record.text_tokens),
            scene_summary: scene_summary(&record.scene, world),
            status: TaskStatus::Open,
            required_judgments: REQUIRED_JUDGMENTS,
        }
    }
}

/// Attribute card standing in for the image.
pub fn scene_summary(scene: &SceneDescriptor, world: &World) -> String {
    let vocab = &world.vocab;
    let level = vocab.sentiment_level(scene.sentiment_polarity);
    let setting_ok = world.compat.is_compatible(scene.event_id, scene.spatial_zone_id);
    [
        format!("person: {}", scene.person_id),
        format!("location: {}", scene.location_id),
        format!("event: {}", scene.event_id),
        format!("sentiment: {:+.2} (level {level} of {})", scene.sentiment_polarity, vocab.sentiment_levels),
        format!("narrative: {}", scene.narrative_theme_id),
        format!("background: {}", scene.background_id),
        format!("time: {:02}:00 (period {})", scene.time_slot, vocab.time_period(scene.time_slot)),
        format!("zone: {}", scene.spatial_zone_id),
        format!(
            "coherent scene: {}",
            if scene.coherence_flag && setting_ok { "yes" } else { "no" }
        ),
    ]
    .join("; ")
}

/// Overall verdicts of one model variant, keyed by pair id (`true` means
/// "consistent").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub name: String,
    pub verdicts: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub tasks: Vec<AnnotationTask>,
    /// Fewer than the requested number of pairs qualified.
    pub warning: bool,
}

/// Pairs the full model gets right while every other variant gets them
/// wrong, in pair-id order, at most `n`.
pub fn select_challenging(
    records: &[&PairRecord],
    full: &ModelPredictions,
    baselines: &[ModelPredictions],
    n: usize,
    world: &World,
) -> Result<Selection, ServiceError> {
    if baselines.is_empty() {
        return Err(ServiceError::Invalid(
            "selection needs the full model and at least one baseline".into(),
        ));
    }
    let mut sorted: Vec<&PairRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let right = |p: &ModelPredictions, r: &PairRecord| p.verdicts.get(&r.id).map(|v| *v == r.overall_consistent);
    let mut tasks = Vec::new();
    for r in sorted {
        if tasks.len() == n {
            break;
        }
        if right(full, r) == Some(true) && baselines.iter().all(|b| right(b, r) == Some(false)) {
            tasks.push(AnnotationTask::for_record(r, world));
        }
    }
    Ok(Selection {
        warning: tasks.len() < n,
        tasks,
    })
}
