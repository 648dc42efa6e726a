use std::path::Path;

use sindy_ekf::filter::TuningPreset;
use sindy_ekf::io::{read_json, read_table};
use sindy_ekf::pipeline::*;
use sindy_ekf::systems::ForcingSignal;
use sindy_ekf::Error;

fn small_oscillator() -> ExperimentSpec {
    let mut spec = ExperimentSpec::preset(CaseName::OscillatorK2);
    spec.training.realizations = 8;
    spec.test.n_steps = 6000;
    spec.cases.truncate(1);
    spec
}

fn small_building(forcing: Option<ForcingSpec>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::preset(CaseName::ShearBuilding);
    spec.training.realizations = 3;
    spec.training.n_steps = 3000;
    spec.test.n_steps = 3000;
    if let Some(f) = forcing {
        spec.training.forcing = Some(f.clone());
        spec.test.forcing = Some(f);
    }
    for f in [&mut spec.training.forcing, &mut spec.test.forcing].into_iter().flatten() {
        if let ForcingSpec::Synthetic { duration, .. } = f {
            *duration = 4.0;
        }
    }
    spec
}

#[test]
fn shipped_configs_equal_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in CaseName::ALL {
        let path = dir.join(format!("{}.json", name.as_str()));
        let spec: ExperimentSpec = read_json(&path).unwrap();
        assert_eq!(spec, ExperimentSpec::preset(name), "{}", path.display());
    }
}

#[test]
fn preset_grids() {
    let osc = ExperimentSpec::preset(CaseName::OscillatorK2);
    let t = generate_test(&osc, 0).unwrap();
    assert_eq!(t.times().len(), 20_001);
    assert!((t.times()[20_000] - 200.0).abs() < 1e-9);

    let sb = ExperimentSpec::preset(CaseName::ShearBuilding);
    let f = load_forcing(sb.test.forcing.as_ref().unwrap(), 0).unwrap();
    assert_eq!(f.dt(), 1e-3);
    assert_eq!(f.len(), 60_001);
}

#[test]
fn file_stages_are_deterministic_and_consistent() {
    let spec = small_oscillator();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = simulate_stage(&spec, a.path()).unwrap();
    let mb = simulate_stage(&spec, b.path()).unwrap();
    assert_eq!(ma, mb);

    let model = train_stage(&spec, a.path()).unwrap();
    assert!(model.embedding.is_some());
    assert_eq!((model.n_state, model.n_param, model.n_forcing), (4, 1, 0));
    let summaries = estimate_stage(&spec, a.path(), None).unwrap();
    assert_eq!(summaries.len(), 1);
    let s = &summaries[0];
    assert_eq!(s.steps, spec.test.n_steps + 1);
    assert!(s.divergence.is_none());
    assert_eq!(s.covariance_violations, 0);

    let est = a.path().join("estimates");
    let label = &spec.cases[0].label;
    let table = read_table(&est.join(format!("{label}_estimates.csv"))).unwrap();
    assert_eq!(table.header.len(), 1 + 5 + 5 + 1);
    assert_eq!(table.rows.len(), s.steps);
    let trace = read_table(&est.join(format!("{label}_parameters.csv"))).unwrap();
    let last = trace.rows.last().unwrap();
    assert_eq!(last[1], s.final_estimate[0]);
    assert!(last[2] < last[1] && last[1] < last[3]);
    for kind in ["tracking", "observations"] {
        let t = read_table(&est.join(format!("{label}_{kind}.csv"))).unwrap();
        assert_eq!(t.rows.len(), s.steps);
    }
    let back: CaseSummary = read_json(&est.join(format!("{label}_summary.json"))).unwrap();
    assert_eq!(&back, s);

    // Estimation from the same artifacts is reproducible.
    let again = estimate_stage(&spec, a.path(), Some(label)).unwrap();
    assert_eq!(again[0].final_estimate, s.final_estimate);
}

#[test]
fn observation_file_round_trips() {
    let spec = small_building(None);
    let dir = tempfile::tempdir().unwrap();
    let manifest = simulate_stage(&spec, dir.path()).unwrap();
    let rec = &manifest.tests[0];
    let (times, y, f) = read_observations(&dir.path().join(&rec.observations.path)).unwrap();
    let test = generate_test(&spec, 0).unwrap();
    assert_eq!(times, test.clean.times);
    assert_eq!(y, test.observations);
    assert_eq!(f.as_ref(), test.clean.forcing.as_ref());
    assert_eq!(y.ncols(), 6);
}

#[test]
fn tampered_data_is_rejected() {
    let spec = small_oscillator();
    let dir = tempfile::tempdir().unwrap();
    let m = simulate_stage(&spec, dir.path()).unwrap();
    train_stage(&spec, dir.path()).unwrap();
    let obs = dir.path().join(&m.tests[0].observations.path);
    let mut text = std::fs::read_to_string(&obs).unwrap();
    text.push_str(&text.lines().last().unwrap().to_string());
    text.push('\n');
    std::fs::write(&obs, text).unwrap();
    let err = estimate_stage(&spec, dir.path(), None).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
}

#[test]
fn stages_require_their_inputs() {
    let spec = small_oscillator();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(train_stage(&spec, dir.path()), Err(Error::InvalidInput(_))));
    simulate_stage(&spec, dir.path()).unwrap();
    assert!(estimate_stage(&spec, dir.path(), None).is_err());
    train_stage(&spec, dir.path()).unwrap();
    assert!(matches!(estimate_stage(&spec, dir.path(), Some("missing")), Err(Error::Config(_))));

    let other = ExperimentSpec::preset(CaseName::OscillatorCoupling);
    assert!(train_stage(&other, dir.path()).is_err());
}

#[test]
fn failures_name_their_stage() {
    let spec = small_building(Some(ForcingSpec::Csv {
        path: "/nonexistent/record.csv".into(),
        resample_dt: 1e-3,
    }));
    let dir = tempfile::tempdir().unwrap();
    match experiment_stage(&spec, dir.path(), None) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "simulate");
            assert!(matches!(*source, Error::Io { .. }), "{source}");
        }
        other => panic!("expected a stage error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn seismogram_csv_drives_the_building() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("record.csv");
    let values: Vec<f64> = (0..401).map(|k| 0.5 * (k as f64 * 0.01 * 9.0).sin()).collect();
    ForcingSignal::from_values(0.0, 0.01, values).unwrap().write_csv(&record).unwrap();
    let spec = small_building(Some(ForcingSpec::Csv {
        path: record,
        resample_dt: 1e-3,
    }));
    let out = dir.path().join("run");
    let summaries = experiment_stage(&spec, &out, None).unwrap();
    assert!(summaries[0].divergence.is_none());
    let table = read_table(&out.join("data/test/k-plus-20_observations.csv")).unwrap();
    assert_eq!(table.header.last().map(String::as_str), Some("b"));
    assert!((table.rows[1000][7] - 0.5 * 9f64.sin()).abs() < 1e-12);
}

#[test]
fn truth_initialized_run_converges_immediately() {
    let mut spec = small_oscillator();
    spec.cases[0].initial_guess = spec.cases[0].truth.clone();
    // Tabulated prior, without the wide override used for the -35% start.
    spec.cases[0].tuning.p0_diag = None;
    let out = run_in_memory(&spec).unwrap();
    let s = &out.cases[0].1.summary;
    assert_eq!(s.convergence_time, vec![Some(0.0)]);
}

#[test]
fn scaled_tuning_converts_to_physical_units() {
    let spec = small_building(None);
    let training = generate_training(&spec).unwrap();
    let art = train(&spec, &training).unwrap();
    let obs = observation_model(&spec, &art.model, None).unwrap();
    let case = &spec.cases[0];
    assert_eq!(case.tuning.units, TuningUnits::ModelScaled);
    let physical = case.tuning.config_for(1e-3, &art.model, &obs).unwrap();
    let (p0, q, r) = TuningPreset::ShearBuilding.diagonals();
    let s = art.model.scaling();
    for i in 0..5 {
        assert!((physical.p0_diag[i] / (p0[i] * s[i] * s[i]) - 1.0).abs() < 1e-12);
        assert!((physical.q_diag[i] / (q[i] * s[i] * s[i]) - 1.0).abs() < 1e-12);
    }
    // y = [x1, x2, v1, v2, a1, a2]; accelerations carry the scale of the rows they come from.
    let expect_obs = [s[0], s[1], s[2], s[3], s[2], s[3]];
    for j in 0..6 {
        assert!((physical.r_diag[j] / (r[j] * expect_obs[j] * expect_obs[j]) - 1.0).abs() < 1e-12);
    }
}
