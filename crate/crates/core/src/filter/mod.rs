//! Extended Kalman filter over the augmented state `[x, phi]`, with the
//! offline training phase that produces its dynamics model.

mod belief;
mod config;
mod ekf;
mod observation;
mod offline;
mod online;

pub use belief::{AugmentedBelief, CovarianceHealth, PSD_TOL, SYMMETRY_TOL, Z95};
pub use config::{FilterConfig, TuningPreset};
pub use ekf::{correct, joseph_update, kalman_gain, predict, Ekf};
pub use observation::{ObservationKind, ObservationModel};
pub use offline::{
    latin_hypercube, run_offline, stratified_samples, EmbeddingSpec, LibrarySpec, OfflineArtifacts, OfflineConfig,
    OfflineReport, SampleRange,
};
pub use online::{
    convergence_time, interval95, lag1_autocorrelation, mean_abs_error, run_online, tuning_report, DivergenceInfo,
    OnlineOptions, OnlineRun, ParameterDiagnostics, TuningReport, TRACE_BLOWUP,
};
