//! Sparse regression of vector fields onto a candidate-function library.

mod library;
mod model;
mod stlsq;

pub use library::{build_theta, FunctionLibrary, Term};
pub use model::{rms_scaling, SindyModel, SindyTrainer, TrainingReport};
pub use stlsq::{stlsq, stlsq_normal, NormalEquations, StlsqOptions, StlsqReport, TargetReport, RANK_TOL};
