//! Budget-accuracy curves, overscaling analysis and budget-allocation
//! policies for repeated-sampling majority voting.
//!
//! Numeric code is generic over the scalar type; the aliases below fix the
//! common choices.

pub mod categorical;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod synth_bench;
pub mod taxonomy;
pub mod trace;
pub mod vote;

pub use error::{Error, Result};
pub use scalar::{Exact, Real, Scalar};
pub use taxonomy::{classify, partition, MonotonicityParams, Partition, SampleType};
pub use trace::{AnswerId, QuestionTrace, SamplingConfig, TraceDataset};
pub use vote::{BudgetAccuracyCurve, SubsampleParams, TieRule};

/// Double-precision curve.
pub type Curve = BudgetAccuracyCurve<f64>;
/// Single-precision curve.
pub type Curve32 = BudgetAccuracyCurve<f32>;
/// Exact rational curve.
pub type ExactCurve = BudgetAccuracyCurve<Exact>;
/// Double-precision answer model.
pub type AnswerModel = categorical::CategoricalAnswerModel<f64>;
/// Exact rational answer model.
pub type ExactAnswerModel = categorical::CategoricalAnswerModel<Exact>;
