//! Backend for the human-evaluation protocol: challenging-pair selection,
//! a durable judgment store, consensus/agreement reporting and the HTTP API
//! the annotation frontend talks to.

pub mod http;
pub mod service;
pub mod store;
pub mod task;

pub use http::router;
pub use service::{AgreementReport, AnnotationService, ServiceError, SubmitRequest};
pub use store::JudgmentStore;
pub use task::{select_challenging, AnnotationTask, ModelPredictions, Selection, TaskStatus};
