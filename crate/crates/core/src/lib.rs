//! Real-time inference of where a visualization user's attention is, from the
//! marks they click, and prediction of the marks they will click next.
//!
//! The engine is generic over the floating-point type through [`Scalar`].
//! The `*F64` and `*F32` aliases below fix it for the common cases.

pub mod evaluation;
pub mod filter;
pub mod markspace;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod simulator;

pub use evaluation::{evaluate, AccuracyReport, KindSummary, LabeledSession, StepRecord};
pub use filter::{
    run_session, FilterError, FilterParams, ParticleSet, Prediction, PredictionRecord,
    PredictionSet, Resampling, SessionRun, StepOutcome,
};
pub use markspace::{
    load_clicklog, load_markspace, save_clicklog, save_markspace, ClickEvent, ClickLogError,
    Color, Mark, MarkId, MarkSpace, MarkSpaceError,
};
pub use model::{
    observation_likelihood, score_candidates, transition_color_pmf, transition_sample,
    AttentionState, FocusNorm, ModelError, ModelParams, ObservationModel, PositionalTerm,
};
pub use scalar::Scalar;

pub type MarkSpaceF64 = MarkSpace<f64>;
pub type MarkSpaceF32 = MarkSpace<f32>;
pub type ClickEventF64 = ClickEvent<f64>;
pub type ClickEventF32 = ClickEvent<f32>;
pub type AttentionStateF64 = AttentionState<f64>;
pub type AttentionStateF32 = AttentionState<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type FilterParamsF64 = FilterParams<f64>;
pub type FilterParamsF32 = FilterParams<f32>;
pub type ParticleSetF64 = ParticleSet<f64>;
pub type ParticleSetF32 = ParticleSet<f32>;
pub type PredictionSetF64 = PredictionSet<f64>;
pub type PredictionSetF32 = PredictionSet<f32>;
