//! Surrogate models over the simulators: Latin hypercube sample plans,
//! design evaluation, response-surface fitting and cross-validated
//! accuracy.

mod assess;
mod dataset;
mod model;
mod plan;

pub use assess::{assess, refine_points};
pub use dataset::{evaluate_design, Dataset, DesignRow, Evaluator, FailedPoint, ModelEvaluator, Provenance};
pub use model::{
    fit, fit_rows, predict, quadratic_terms, shape_grid, AccuracyReport, Prediction, ResponseAccuracy, ResponseFit,
    SurrogateKind, SurrogateModel,
};
pub use plan::{sample_plan, BoxDim, Param, ParameterBox};
