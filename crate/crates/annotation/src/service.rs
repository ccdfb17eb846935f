//! Task queue, judgment intake and the agreement report.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use contextguard_core::eval::{agreement, consensus, HumanJudgment};
use contextguard_core::types::{ContextDimension, PairRecord};
use serde::{Deserialize, Serialize};

use crate::store::JudgmentStore;
use crate::task::{AnnotationTask, ModelPredictions, TaskStatus};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("{0}")]
    Invalid(String),
    #[error("no task has the required number of judgments yet")]
    NoDoneTasks,
    #[error("storage: {0}")]
    Storage(String),
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownAnnotator(_) => "unknown_annotator",
            ServiceError::UnknownPair(_) => "unknown_pair",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::NoDoneTasks => "no_done_tasks",
            ServiceError::Storage(_) => "storage_error",
        }
    }
}

/// Body of a judgment submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub pair_id: String,
    pub annotator: String,
    /// `true` means "consistent".
    pub verdict: bool,
    #[serde(default)]
    pub dimension: Option<ContextDimension>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub pair_id: String,
    pub annotator: String,
    pub replaced: bool,
    pub judgments: usize,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub model: String,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub done_tasks: usize,
    pub rows: Vec<AgreementRow>,
}

/// What `GET /api/pairs/{id}` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPayload {
    pub pair_id: String,
    pub display_text: String,
    pub scene_summary: String,
    pub status: TaskStatus,
    pub judgments: usize,
    pub required_judgments: usize,
}

#[derive(Debug)]
pub struct AnnotationService {
    tasks: BTreeMap<String, AnnotationTask>,
    predictions: Vec<ModelPredictions>,
    annotators: BTreeSet<String>,
    store: JudgmentStore,
}

impl AnnotationService {
    /// Task statuses are recomputed from the store, so a reopened store
    /// restores every done task.
    pub fn new(
        tasks: Vec<AnnotationTask>,
        predictions: Vec<ModelPredictions>,
        annotators: impl IntoIterator<Item = String>,
        store: JudgmentStore,
    ) -> Self {
        let mut service = AnnotationService {
            tasks: tasks.into_iter().map(|t| (t.pair_id.clone(), t)).collect(),
            predictions,
            annotators: annotators.into_iter().collect(),
            store,
        };
        let ids: Vec<String> = service.tasks.keys().cloned().collect();
        for id in ids {
            service.refresh_status(&id);
        }
        service
    }

    fn refresh_status(&mut self, pair_id: &str) {
        let count = self.store.count_for_pair(pair_id);
        if let Some(task) = self.tasks.get_mut(pair_id) {
            if count >= task.required_judgments {
                task.status = TaskStatus::Done;
            }
        }
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), ServiceError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(ServiceError::UnknownAnnotator(annotator.to_string()))
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.tasks.values()
    }

    pub fn store(&self) -> &JudgmentStore {
        &self.store
    }

    pub fn done_count(&self) -> usize {
        self.tasks.values().filter(|t| t.status == TaskStatus::Done).count()
    }

    /// The open task with the smallest pair id this annotator has not judged.
    pub fn next_task(&self, annotator: &str) -> Result<Option<AnnotationTask>, ServiceError> {
        self.check_annotator(annotator)?;
        Ok(self
            .tasks
            .values()
            .find(|t| t.status == TaskStatus::Open && !self.store.has_judged(&t.pair_id, annotator))
            .cloned())
    }

    pub fn submit_judgment(&mut self, req: SubmitRequest) -> Result<SubmitAck, ServiceError> {
        self.check_annotator(&req.annotator)?;
        if !self.tasks.contains_key(&req.pair_id) {
            return Err(ServiceError::UnknownPair(req.pair_id));
        }
        let judgment = HumanJudgment {
            pair_id: req.pair_id.clone(),
            annotator_id: req.annotator.clone(),
            verdict: req.verdict,
            inconsistency_dimension: req.dimension,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        judgment.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let replaced = self.store.append(judgment)?;
        self.refresh_status(&req.pair_id);
        Ok(SubmitAck {
            judgments: self.store.count_for_pair(&req.pair_id),
            status: self.tasks[&req.pair_id].status,
            pair_id: req.pair_id,
            annotator: req.annotator,
            replaced,
        })
    }

    /// Agreement of every model variant with the consensus on done tasks.
    pub fn agreement_report(&self) -> Result<AgreementReport, ServiceError> {
        let done: Vec<&str> = self
            .tasks
            .values()
            .filter(|t| t.status == TaskStatus::Done)
            .map(|t| t.pair_id.as_str())
            .collect();
        if done.is_empty() {
            return Err(ServiceError::NoDoneTasks);
        }
        let judgments: Vec<HumanJudgment> = done
            .iter()
            .flat_map(|id| self.store.for_pair(id).cloned())
            .collect();
        let verdicts = consensus(&judgments);
        let mut rows = Vec::with_capacity(self.predictions.len());
        for p in &self.predictions {
            let model: BTreeMap<String, bool> = done
                .iter()
                .filter_map(|id| p.verdicts.get(*id).map(|v| (id.to_string(), *v)))
                .collect();
            let value = agreement(&model, &verdicts)
                .map_err(|e| ServiceError::Invalid(format!("model `{}`: {e}", p.name)))?;
            rows.push(AgreementRow {
                model: p.name.clone(),
                agreement: value,
            });
        }
        Ok(AgreementReport {
            done_tasks: done.len(),
            rows,
        })
    }

    pub fn pair(&self, pair_id: &str) -> Result<PairPayload, ServiceError> {
        let task = self
            .tasks
            .get(pair_id)
            .ok_or_else(|| ServiceError::UnknownPair(pair_id.to_string()))?;
        Ok(PairPayload {
            pair_id: task.pair_id.clone(),
            display_text: task.display_text.clone(),
            scene_summary: task.scene_summary.clone(),
            status: task.status,
            judgments: self.store.count_for_pair(pair_id),
            required_judgments: task.required_judgments,
        })
    }
}

/// Model verdicts restricted to `records`, for building a service.
pub fn predictions_for(name: &str, records: &[&PairRecord], verdict: impl Fn(&PairRecord) -> bool) -> ModelPredictions {
    ModelPredictions {
        name: name.to_string(),
        verdicts: records.iter().map(|r| (r.id.clone(), verdict(r))).collect(),
    }
}
