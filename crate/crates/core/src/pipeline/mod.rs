//! End-to-end drivers: experiment presets, simulation, training and
//! online estimation, with file artifacts for each stage.

mod artifacts;
mod run;
mod spec;

pub use artifacts::{
    estimate_stage, experiment_stage, load_model, read_observations, sha256_file, simulate_stage, train_stage, DataManifest, FileRecord, ModelManifest,
    RealizationRecord, TestRecord,
};
pub use run::{
    attach_derivatives, ci_width_at, clean_observations, estimate_case, generate_test, generate_training, initial_belief,
    load_forcing, observation_model, reference_states, run_in_memory, sample_parameters, simulate_realization, train,
    CaseOutcome, CaseSummary, DivergenceSummary, ExperimentOutcome, GroundTruth, TestData,
};
pub use spec::{
    CaseName, CaseSpec, ExperimentSpec, ForcingSpec, NoiseSpec, ParameterName, ParameterSpec, SamplingScheme, SystemSpec,
    TestSpec, TrainingSpec, TuningSpec, TuningUnits,
};
