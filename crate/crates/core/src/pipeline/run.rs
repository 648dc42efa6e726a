use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::spec::{CaseSpec, ExperimentSpec, ForcingSpec, ParameterName, SamplingScheme, SystemSpec};
use crate::embedding::DelayEmbedding;
use crate::error::{Error, Result};
use crate::filter::{
    convergence_time, interval95, latin_hypercube, run_offline, run_online, stratified_samples, tuning_report,
    AugmentedBelief, ObservationModel, OfflineArtifacts, OnlineOptions, OnlineRun, SampleRange, TuningReport, Z95,
};
use crate::sindy::SindyModel;
use crate::systems::{
    add_white_noise, integrate, synthetic_seismogram, BuildingForcing, CoupledOscillatorParams, ForcingSignal,
    OscillatorParameter, ShearBuildingParams, Trajectory,
};

/// Parameter draws in filter units, one vector per realization.
pub fn sample_parameters(spec: &ExperimentSpec) -> Result<Vec<Vec<f64>>> {
    let t = &spec.training;
    let signed = |draws: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        draws
            .into_iter()
            .map(|d| d.iter().zip(&t.parameters).map(|(v, p)| v * p.sign).collect())
            .collect()
    };
    match t.scheme {
        SamplingScheme::Stratified => {
            if t.parameters.len() != 1 {
                return Err(Error::Config("stratified sampling supports a single parameter".into()));
            }
            let s = stratified_samples(t.parameters[0].range, t.realizations, t.seed)?;
            Ok(signed(s.into_iter().map(|v| vec![v]).collect()))
        }
        SamplingScheme::LatinHypercube => {
            let ranges: Vec<SampleRange> = t.parameters.iter().map(|p| p.range).collect();
            Ok(signed(latin_hypercube(&ranges, t.realizations, t.seed)?))
        }
    }
}

/// Loads or synthesises the forcing, then resamples it. `seed_offset`
/// selects an independent synthetic record.
pub fn load_forcing(fs: &ForcingSpec, seed_offset: u64) -> Result<ForcingSignal> {
    let raw = match fs {
        ForcingSpec::Synthetic { duration, dt, seed, .. } => synthetic_seismogram(*duration, *dt, seed.wrapping_add(seed_offset))?,
        ForcingSpec::Csv { path, .. } => ForcingSignal::read_csv(path)?,
    };
    raw.resample(fs.resample_dt())
}

fn forcing_signals(spec: &ExperimentSpec, fs: &ForcingSpec, seed_offset: u64) -> Result<Vec<ForcingSignal>> {
    let mode = match &spec.system {
        SystemSpec::ShearBuilding { forcing_mode, .. } => *forcing_mode,
        _ => return Ok(Vec::new()),
    };
    let first = load_forcing(fs, seed_offset)?;
    match mode {
        BuildingForcing::Ground => Ok(vec![first]),
        BuildingForcing::PerStorey => {
            let second = match fs {
                ForcingSpec::Synthetic { .. } => load_forcing(fs, seed_offset.wrapping_add(500))?,
                ForcingSpec::Csv { .. } => first.clone(),
            };
            Ok(vec![first, second])
        }
    }
}

/// Ground-truth vector field for parameters given in filter units.
pub enum GroundTruth {
    Building(ShearBuildingParams, BuildingForcing),
    Oscillator(CoupledOscillatorParams),
}

impl GroundTruth {
    pub fn new(spec: &ExperimentSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.n_param() {
            return Err(Error::shape(format!("expected {} parameters, got {}", spec.n_param(), params.len())));
        }
        match &spec.system {
            SystemSpec::ShearBuilding {
                mass_per_floor,
                damping_ratio,
                damping_reference_stiffness,
                forcing_mode,
            } => {
                let reference = ShearBuildingParams::with_modal_damping(*mass_per_floor, *damping_reference_stiffness, *damping_ratio)?;
                let k = params[0] * spec.training.parameters[0].unit_scale;
                Ok(GroundTruth::Building(reference.with_stiffness(k)?, *forcing_mode))
            }
            SystemSpec::CoupledOscillator { base, .. } => {
                let mut p = *base;
                for (v, ps) in params.iter().zip(&spec.training.parameters) {
                    let which = match ps.name {
                        ParameterName::K2 => OscillatorParameter::K2,
                        ParameterName::Alpha => OscillatorParameter::Alpha,
                        ParameterName::Beta => OscillatorParameter::Beta,
                        ParameterName::Stiffness => return Err(Error::Config("stiffness is not an oscillator parameter".into())),
                    };
                    p.set(which, v * ps.unit_scale);
                }
                p.validate()?;
                Ok(GroundTruth::Oscillator(p))
            }
        }
    }

    pub fn rhs(&self, x: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        let v = match self {
            GroundTruth::Building(p, mode) => p.rhs_with(*mode, x, b)?,
            GroundTruth::Oscillator(p) => p.rhs(x)?,
        };
        out.copy_from_slice(&v);
        Ok(())
    }
}

fn initial_state(spec: &ExperimentSpec) -> Vec<f64> {
    match &spec.system {
        SystemSpec::ShearBuilding { .. } => vec![0.0; 4],
        SystemSpec::CoupledOscillator { initial_state, .. } => initial_state.to_vec(),
    }
}

/// Integrates one realization; the trajectory carries exact derivatives
/// and its parameter values (filter units).
pub fn simulate_realization(
    spec: &ExperimentSpec,
    params: &[f64],
    forcing: &[ForcingSignal],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    let truth = GroundTruth::new(spec, params)?;
    let mut tr = integrate(|x, b, out| truth.rhs(x, b, out), &initial_state(spec), forcing, dt, n_steps, spec.training.method)?;
    tr.parameter_values = Some(params.to_vec());
    Ok(tr)
}

/// All training realizations, integrated in parallel.
pub fn generate_training(spec: &ExperimentSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let draws = sample_parameters(spec)?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(draws.len());
    let chunk = draws.len().div_ceil(threads);
    let results: Vec<Result<Trajectory>> = std::thread::scope(|s| {
        let handles: Vec<_> = draws
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, p)| {
                            let i = (ci * chunk + j) as u64;
                            let forcing = match &spec.training.forcing {
                                Some(fs) => forcing_signals(spec, fs, i + 1)?,
                                None => Vec::new(),
                            };
                            simulate_realization(spec, p, &forcing, spec.training.dt, spec.training.n_steps)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    results.into_iter().collect()
}

/// Restores exact derivatives on a trajectory read back from disk.
pub fn attach_derivatives(spec: &ExperimentSpec, tr: Trajectory) -> Result<Trajectory> {
    let params = tr
        .parameter_values
        .clone()
        .ok_or_else(|| Error::invalid("trajectory has no parameter values"))?;
    let truth = GroundTruth::new(spec, &params)?;
    tr.with_derivatives(|x, b, out| truth.rhs(x, b, out))
}

/// Clean test trajectory and the observations derived from it.
#[derive(Debug, Clone)]
pub struct TestData {
    pub clean: Trajectory,
    pub clean_observations: DMatrix<f64>,
    pub observations: DMatrix<f64>,
}

impl TestData {
    pub fn times(&self) -> &[f64] {
        &self.clean.times
    }
}

/// Observation channels of a trajectory: `[x, v, a]` per floor for the
/// building, the first displacement for the oscillator.
pub fn clean_observations(spec: &ExperimentSpec, tr: &Trajectory) -> Result<DMatrix<f64>> {
    match &spec.system {
        SystemSpec::ShearBuilding { .. } => {
            let d = tr.derivatives.as_ref().ok_or_else(|| Error::invalid("trajectory has no derivatives"))?;
            let t = tr.len();
            Ok(DMatrix::from_fn(t, 6, |j, c| if c < 4 { tr.states[(j, c)] } else { d[(j, c - 2)] }))
        }
        SystemSpec::CoupledOscillator { .. } => {
            let ch = spec.offline.embedding.map_or(0, |e| e.channel);
            Ok(tr.states.columns(ch, 1).into_owned())
        }
    }
}

pub fn generate_test(spec: &ExperimentSpec, case_index: usize) -> Result<TestData> {
    spec.validate()?;
    let case = spec
        .cases
        .get(case_index)
        .ok_or_else(|| Error::Config(format!("no test case {case_index}")))?;
    let forcing = match &spec.test.forcing {
        Some(fs) => forcing_signals(spec, fs, 0)?,
        None => Vec::new(),
    };
    let clean = simulate_realization(spec, &case.truth, &forcing, spec.test.dt, spec.test.n_steps)?;
    let clean_obs = clean_observations(spec, &clean)?;
    let noisy = add_white_noise(
        &clean_obs,
        spec.noise.snr,
        spec.noise.seed.wrapping_add(case_index as u64),
        spec.noise.convention,
    )?;
    Ok(TestData {
        clean,
        clean_observations: clean_obs,
        observations: noisy,
    })
}

pub fn train(spec: &ExperimentSpec, trajectories: &[Trajectory]) -> Result<OfflineArtifacts> {
    run_offline(trajectories, &spec.offline)
}

pub fn observation_model(spec: &ExperimentSpec, model: &SindyModel, embedding: Option<&DelayEmbedding>) -> Result<ObservationModel> {
    let d = model.n_state() + model.n_param();
    match (&spec.system, embedding) {
        (SystemSpec::ShearBuilding { .. }, _) => ObservationModel::sindy_augmented(&[0, 1, 2, 3], &[2, 3], d),
        (SystemSpec::CoupledOscillator { .. }, Some(e)) => ObservationModel::delay_row(&e.observation_row(), d),
        (SystemSpec::CoupledOscillator { .. }, None) => Err(Error::Config("oscillator estimation needs an embedding".into())),
    }
}

/// Initial belief: building at rest; oscillator delay state projected from
/// the first window of observations.
pub fn initial_belief(
    spec: &ExperimentSpec,
    case: &CaseSpec,
    embedding: Option<&DelayEmbedding>,
    observations: &DMatrix<f64>,
    p0: &[f64],
    t0: f64,
) -> Result<AugmentedBelief> {
    let mut mean = match (&spec.system, embedding) {
        (SystemSpec::ShearBuilding { .. }, _) => vec![0.0; 4],
        (SystemSpec::CoupledOscillator { .. }, Some(e)) => {
            if observations.nrows() < e.span() {
                return Err(Error::invalid("fewer observations than one delay window"));
            }
            let window: Vec<f64> = (0..e.w()).map(|i| observations[(i * e.zeta(), 0)]).collect();
            e.project(&window)?.iter().copied().collect()
        }
        _ => return Err(Error::Config("oscillator estimation needs an embedding".into())),
    };
    mean.extend_from_slice(&case.initial_guess);
    AugmentedBelief::diagonal(&mean, p0, t0)
}

/// Reference trajectory of the filter state: physical states for the
/// building, delay coordinates of the clean signal for the oscillator
/// (`NaN` where no full window is available).
pub fn reference_states(test: &TestData, embedding: Option<&DelayEmbedding>) -> Result<DMatrix<f64>> {
    match embedding {
        None => Ok(test.clean.states.clone()),
        Some(e) => {
            let y: Vec<f64> = test.clean_observations.column(0).iter().copied().collect();
            let proj = e.project_series(&y)?;
            let mut out = DMatrix::from_element(y.len(), e.eta(), f64::NAN);
            out.rows_mut(0, proj.nrows()).copy_from(&proj);
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub label: String,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub initial_guess: Vec<f64>,
    pub final_estimate: Vec<f64>,
    pub final_relative_error: Vec<f64>,
    /// First time after which the relative error stays below the tolerance.
    pub convergence_time: Vec<Option<f64>>,
    pub convergence_tolerance: f64,
    pub ci_width_initial: Vec<f64>,
    pub ci_width_final: Vec<f64>,
    pub ci_width_mean: Vec<f64>,
    /// Mean absolute state error against the reference, per state component.
    pub state_tracking_error: Vec<f64>,
    /// RMS error against the clean signal, per observed channel.
    pub filtered_observation_rmse: Vec<f64>,
    pub noisy_observation_rmse: Vec<f64>,
    pub steps: usize,
    pub elapsed_seconds: f64,
    pub covariance_checks: usize,
    pub covariance_violations: usize,
    pub worst_asymmetry: f64,
    pub worst_eigen_ratio: f64,
    pub divergence: Option<DivergenceSummary>,
    pub tuning: TuningReport,
}

pub struct CaseOutcome {
    pub run: OnlineRun,
    /// `h(mean)` at every step.
    pub reconstructed: DMatrix<f64>,
    pub reference: DMatrix<f64>,
    pub summary: CaseSummary,
}

fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>, col: usize, rows: usize) -> f64 {
    let s: f64 = (0..rows).map(|k| (a[(k, col)] - b[(k, col)]).powi(2)).sum();
    (s / rows.max(1) as f64).sqrt()
}

/// Online phase for one test case.
#[allow(clippy::too_many_arguments)]
pub fn estimate_case(
    spec: &ExperimentSpec,
    case: &CaseSpec,
    model: &SindyModel,
    embedding: Option<&DelayEmbedding>,
    times: &[f64],
    observations: &DMatrix<f64>,
    forcing: Option<&DMatrix<f64>>,
    test: Option<&TestData>,
) -> Result<CaseOutcome> {
    let obs = observation_model(spec, model, embedding)?;
    let config = case.tuning.config_for(spec.test.dt, model, &obs)?;
    let t0 = times.first().copied().unwrap_or(0.0);
    let initial = initial_belief(spec, case, embedding, observations, &config.p0_diag, t0)?;
    let run = run_online(model, &obs, observations, forcing, &initial, &config, &OnlineOptions::default())?;
    let n = model.n_state();
    let l = case.truth.len();
    let steps = run.n_steps();

    let mut reconstructed = DMatrix::from_element(steps, obs.n_obs(), f64::NAN);
    let empty: [f64; 0] = [];
    for k in 0..steps {
        let z = run.means.row(k).transpose();
        let b: Vec<f64> = forcing.map_or(Vec::new(), |f| f.row(k).iter().copied().collect());
        let bb: &[f64] = if b.is_empty() { &empty } else { &b };
        let (h, _) = obs.evaluate(&z, bb, model)?;
        reconstructed.row_mut(k).copy_from(&h.transpose());
    }

    let reference = match test {
        Some(t) => reference_states(t, embedding)?,
        None => DMatrix::from_element(steps, n, f64::NAN),
    };
    let state_tracking_error = (0..n)
        .map(|i| {
            let (s, c) = (0..steps.min(reference.nrows()))
                .filter(|&k| reference[(k, i)].is_finite())
                .fold((0.0, 0usize), |(s, c), k| (s + (run.means[(k, i)] - reference[(k, i)]).abs(), c + 1));
            if c > 0 {
                s / c as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    let (filtered_observation_rmse, noisy_observation_rmse) = match test {
        Some(t) => (
            (0..obs.n_obs()).map(|j| rmse(&reconstructed, &t.clean_observations, j, steps)).collect(),
            (0..obs.n_obs()).map(|j| rmse(observations, &t.clean_observations, j, steps)).collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };

    let last = steps - 1;
    let final_estimate: Vec<f64> = (0..l).map(|j| run.means[(last, n + j)]).collect();
    let width = |k: usize, j: usize| 2.0 * Z95 * run.std_devs[(k, n + j)];
    let summary = CaseSummary {
        label: case.label.clone(),
        parameters: spec.parameter_labels(),
        truth: case.truth.clone(),
        initial_guess: case.initial_guess.clone(),
        final_relative_error: final_estimate
            .iter()
            .zip(&case.truth)
            .map(|(e, t)| ((e - t) / t).abs())
            .collect(),
        final_estimate,
        convergence_time: (0..l)
            .map(|j| convergence_time(&run.times, &run.component(n + j), case.truth[j], spec.convergence_tolerance))
            .collect(),
        convergence_tolerance: spec.convergence_tolerance,
        ci_width_initial: (0..l).map(|j| width(0, j)).collect(),
        ci_width_final: (0..l).map(|j| width(last, j)).collect(),
        ci_width_mean: (0..l).map(|j| (0..steps).map(|k| width(k, j)).sum::<f64>() / steps as f64).collect(),
        state_tracking_error,
        filtered_observation_rmse,
        noisy_observation_rmse,
        steps,
        elapsed_seconds: run.elapsed_seconds,
        covariance_checks: run.covariance_checks,
        covariance_violations: run.covariance_violations,
        worst_asymmetry: run.worst_asymmetry,
        worst_eigen_ratio: run.worst_eigen_ratio,
        divergence: run.divergence.as_ref().map(|d| DivergenceSummary {
            step: d.step,
            time: d.time,
            reason: d.reason.clone(),
        }),
        tuning: tuning_report(&run, n),
    };
    Ok(CaseOutcome {
        run,
        reconstructed,
        reference,
        summary,
    })
}

/// Everything produced by an in-memory end-to-end run.
pub struct ExperimentOutcome {
    pub artifacts: OfflineArtifacts,
    pub cases: Vec<(TestData, CaseOutcome)>,
}

/// Simulate, train and estimate without touching the file system.
pub fn run_in_memory(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let training = generate_training(spec).map_err(|e| stage("simulate", e))?;
    let artifacts = train(spec, &training).map_err(|e| stage("train", e))?;
    drop(training);
    let mut cases = Vec::new();
    for (i, case) in spec.cases.iter().enumerate() {
        let test = generate_test(spec, i).map_err(|e| stage("simulate", e))?;
        let outcome = estimate_case(
            spec,
            case,
            &artifacts.model,
            artifacts.embedding.as_ref(),
            &test.clean.times,
            &test.observations,
            test.clean.forcing.as_ref(),
            Some(&test),
        )
        .map_err(|e| stage("estimate", e))?;
        cases.push((test, outcome));
    }
    Ok(ExperimentOutcome { artifacts, cases })
}

pub(crate) fn stage(name: &'static str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    }
}

/// Width of the 95% band of component `i` at the step closest to `t`.
pub fn ci_width_at(run: &OnlineRun, i: usize, t: f64) -> f64 {
    let k = run
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map_or(0, |(k, _)| k);
    let (lo, hi) = interval95(run, i);
    hi[k] - lo[k]
}

