//! File-backed stages. Layout under the output directory:
//!
//! ```text
//! spec.json
//! data/manifest.json
//! data/training/realization_XXX.csv
//! data/test/<case>_clean.csv
//! data/test/<case>_observations.csv
//! model/model.json, model/embedding.json, model/training_report.json, model/manifest.json
//! estimates/<case>_estimates.csv, <case>_parameters.csv, <case>_tracking.csv,
//! estimates/<case>_observations.csv, <case>_summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{
    attach_derivatives, clean_observations, estimate_case, generate_test, generate_training, stage, train, CaseOutcome,
    CaseSummary, TestData,
};
use super::spec::{CaseSpec, ExperimentSpec};
use crate::embedding::DelayEmbedding;
use crate::error::{Error, Result};
use crate::filter::OfflineReport;
use crate::io::{read_json, read_table, write_json, write_table};
use crate::sindy::SindyModel;
use crate::systems::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    fn of(root: &Path, rel: PathBuf) -> Result<Self> {
        let sha256 = sha256_file(&root.join(&rel))?;
        Ok(Self { path: rel, sha256 })
    }

    fn verify(&self, root: &Path) -> Result<PathBuf> {
        let full = root.join(&self.path);
        let actual = sha256_file(&full)?;
        if actual != self.sha256 {
            return Err(Error::invalid(format!(
                "checksum mismatch for {}: manifest {}, file {}",
                full.display(),
                self.sha256,
                actual
            )));
        }
        Ok(full)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub parameters: Vec<f64>,
    pub file: FileRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub label: String,
    pub truth: Vec<f64>,
    pub noise_seed: u64,
    pub clean: FileRecord,
    pub observations: FileRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub experiment: String,
    pub spec: FileRecord,
    pub training_seed: u64,
    pub noise_seed: u64,
    pub parameter_names: Vec<String>,
    pub n_state: usize,
    pub n_forcing: usize,
    pub realizations: Vec<RealizationRecord>,
    pub tests: Vec<TestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub data_manifest: FileRecord,
    pub model: FileRecord,
    pub embedding: Option<FileRecord>,
    pub report: FileRecord,
    pub n_state: usize,
    pub n_param: usize,
    pub n_forcing: usize,
}

const SPEC_FILE: &str = "spec.json";
const DATA_MANIFEST: &str = "data/manifest.json";
const MODEL_MANIFEST: &str = "model/manifest.json";

fn observation_header(o: usize, m: usize) -> Vec<String> {
    let mut h = vec!["time_s".to_string()];
    h.extend((1..=o).map(|j| format!("y{j}")));
    match m {
        0 => {}
        1 => h.push("b".into()),
        _ => h.extend((1..=m).map(|i| format!("b{i}"))),
    }
    h
}

fn write_observations(path: &Path, times: &[f64], y: &DMatrix<f64>, forcing: Option<&DMatrix<f64>>) -> Result<()> {
    let m = forcing.map_or(0, |f| f.ncols());
    let rows: Vec<Vec<f64>> = (0..times.len())
        .map(|k| {
            let mut r = vec![times[k]];
            r.extend(y.row(k).iter());
            if let Some(f) = forcing {
                r.extend(f.row(k).iter());
            }
            r
        })
        .collect();
    write_table(path, &observation_header(y.ncols(), m), rows.iter().map(|r| r.as_slice()))
}

/// Reads `time_s, y1..yo, b..` back into times, observations and forcing.
pub fn read_observations(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>, Option<DMatrix<f64>>)> {
    let table = read_table(path)?;
    let o = table.header.iter().filter(|h| h.starts_with('y')).count();
    let m = table.header.len().saturating_sub(1 + o);
    if table.header != observation_header(o, m) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("unexpected observation header `{}`", table.header.join(",")),
        });
    }
    let t = table.rows.len();
    let y = DMatrix::from_fn(t, o, |k, j| table.rows[k][1 + j]);
    let f = (m > 0).then(|| DMatrix::from_fn(t, m, |k, j| table.rows[k][1 + o + j]));
    Ok((table.column(0), y, f))
}

fn rel(parts: &[&str]) -> PathBuf {
    parts.iter().collect()
}

/// Writes the spec, training realizations, test signals and the data
/// manifest.
pub fn simulate_stage(spec: &ExperimentSpec, out: &Path) -> Result<DataManifest> {
    spec.validate()?;
    write_json(&out.join(SPEC_FILE), spec)?;
    let training = generate_training(spec)?;
    let mut realizations = Vec::with_capacity(training.len());
    for (i, tr) in training.iter().enumerate() {
        let r = rel(&["data", "training", &format!("realization_{i:03}.csv")]);
        tr.write_csv(&out.join(&r))?;
        realizations.push(RealizationRecord {
            index: i,
            parameters: tr.parameter_values.clone().unwrap_or_default(),
            file: FileRecord::of(out, r)?,
        });
    }
    let n_state = training[0].n_state();
    let n_forcing = training[0].n_forcing();
    drop(training);

    let mut tests = Vec::with_capacity(spec.cases.len());
    for (i, case) in spec.cases.iter().enumerate() {
        let test = generate_test(spec, i)?;
        let clean = rel(&["data", "test", &format!("{}_clean.csv", case.label)]);
        let observations = rel(&["data", "test", &format!("{}_observations.csv", case.label)]);
        test.clean.write_csv(&out.join(&clean))?;
        write_observations(&out.join(&observations), test.times(), &test.observations, test.clean.forcing.as_ref())?;
        tests.push(TestRecord {
            label: case.label.clone(),
            truth: case.truth.clone(),
            noise_seed: spec.noise.seed.wrapping_add(i as u64),
            clean: FileRecord::of(out, clean)?,
            observations: FileRecord::of(out, observations)?,
        });
    }

    let manifest = DataManifest {
        experiment: spec.name.as_str().to_string(),
        spec: FileRecord::of(out, SPEC_FILE.into())?,
        training_seed: spec.training.seed,
        noise_seed: spec.noise.seed,
        parameter_names: spec.parameter_labels(),
        n_state,
        n_forcing,
        realizations,
        tests,
    };
    write_json(&out.join(DATA_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn load_data_manifest(spec: &ExperimentSpec, out: &Path) -> Result<DataManifest> {
    let path = out.join(DATA_MANIFEST);
    if !path.exists() {
        return Err(Error::invalid(format!("data manifest {} not found; run `simulate` first", path.display())));
    }
    let manifest: DataManifest = read_json(&path)?;
    if manifest.experiment != spec.name.as_str() {
        return Err(Error::invalid(format!(
            "data was generated for `{}`, not `{}`",
            manifest.experiment,
            spec.name.as_str()
        )));
    }
    if manifest.parameter_names != spec.parameter_labels() {
        return Err(Error::shape("data manifest parameters differ from the spec"));
    }
    Ok(manifest)
}

/// Reads the training data named by the manifest, fits and writes the model
/// artifacts.
pub fn train_stage(spec: &ExperimentSpec, out: &Path) -> Result<ModelManifest> {
    spec.validate()?;
    let manifest = load_data_manifest(spec, out)?;
    let mut trajectories = Vec::with_capacity(manifest.realizations.len());
    for r in &manifest.realizations {
        let mut tr = Trajectory::read_csv(&r.file.verify(out)?)?;
        tr.parameter_values = Some(r.parameters.clone());
        trajectories.push(attach_derivatives(spec, tr)?);
    }
    let artifacts = train(spec, &trajectories)?;
    drop(trajectories);

    let model_rel = rel(&["model", "model.json"]);
    write_json(&out.join(&model_rel), &artifacts.model)?;
    let embedding = match &artifacts.embedding {
        Some(e) => {
            let r = rel(&["model", "embedding.json"]);
            write_json(&out.join(&r), e)?;
            Some(FileRecord::of(out, r)?)
        }
        None => None,
    };
    let report_rel = rel(&["model", "training_report.json"]);
    write_json(&out.join(&report_rel), &artifacts.report)?;
    let mm = ModelManifest {
        data_manifest: FileRecord::of(out, DATA_MANIFEST.into())?,
        model: FileRecord::of(out, model_rel)?,
        embedding,
        report: FileRecord::of(out, report_rel)?,
        n_state: artifacts.model.n_state(),
        n_param: artifacts.model.n_param(),
        n_forcing: artifacts.model.n_forcing(),
    };
    write_json(&out.join(MODEL_MANIFEST), &mm)?;
    Ok(mm)
}

/// Loads the serialized model artifacts.
pub fn load_model(out: &Path) -> Result<(ModelManifest, SindyModel, Option<DelayEmbedding>, OfflineReport)> {
    let path = out.join(MODEL_MANIFEST);
    if !path.exists() {
        return Err(Error::invalid(format!("model manifest {} not found; run `train` first", path.display())));
    }
    let mm: ModelManifest = read_json(&path)?;
    let model: SindyModel = read_json(&mm.model.verify(out)?)?;
    let embedding = match &mm.embedding {
        Some(r) => Some(read_json::<DelayEmbedding>(&r.verify(out)?)?),
        None => None,
    };
    let report: OfflineReport = read_json(&mm.report.verify(out)?)?;
    if (model.n_state(), model.n_param(), model.n_forcing()) != (mm.n_state, mm.n_param, mm.n_forcing) {
        return Err(Error::shape("model file disagrees with its manifest"));
    }
    Ok((mm, model, embedding, report))
}

fn estimate_one(
    spec: &ExperimentSpec,
    case: &CaseSpec,
    record: &TestRecord,
    model: &SindyModel,
    embedding: Option<&DelayEmbedding>,
    out: &Path,
) -> Result<CaseSummary> {
    let (times, y, forcing) = read_observations(&record.observations.verify(out)?)?;
    if forcing.as_ref().map_or(0, |f| f.ncols()) != model.n_forcing() {
        return Err(Error::shape(format!(
            "observations carry {} forcing columns, model expects {}",
            forcing.as_ref().map_or(0, |f| f.ncols()),
            model.n_forcing()
        )));
    }
    if case.truth.len() != model.n_param() || case.initial_guess.len() != model.n_param() {
        return Err(Error::shape("case parameter count differs from the model"));
    }
    let mut clean = Trajectory::read_csv(&record.clean.verify(out)?)?;
    clean.parameter_values = Some(record.truth.clone());
    let clean = attach_derivatives(spec, clean)?;
    let clean_obs = clean_observations(spec, &clean)?;
    if clean_obs.shape() != y.shape() {
        return Err(Error::shape("clean and noisy observations differ in shape"));
    }
    let test = TestData {
        clean,
        clean_observations: clean_obs,
        observations: y.clone(),
    };
    let outcome = estimate_case(spec, case, model, embedding, &times, &y, forcing.as_ref(), Some(&test))?;
    write_case(spec, model, &test, &outcome, out)?;
    Ok(outcome.summary)
}

fn write_case(spec: &ExperimentSpec, model: &SindyModel, test: &TestData, outcome: &CaseOutcome, out: &Path) -> Result<()> {
    let dir = out.join("estimates");
    let label = &outcome.summary.label;
    let run = &outcome.run;
    let steps = run.n_steps();
    let n = model.n_state();
    let o = run.innovations.ncols();
    let mut names = model.library().variable_names()[..n].to_vec();
    names.extend(spec.parameter_labels());

    let mut header = vec!["time_s".to_string()];
    header.extend(names.iter().map(|s| format!("mean_{s}")));
    header.extend(names.iter().map(|s| format!("std_{s}")));
    header.extend((1..=o).map(|j| format!("innovation_{j}")));
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            let mut r = vec![run.times[k]];
            r.extend(run.means.row(k).iter());
            r.extend(run.std_devs.row(k).iter());
            r.extend(run.innovations.row(k).iter());
            r
        })
        .collect();
    write_table(&dir.join(format!("{label}_estimates.csv")), &header, rows.iter().map(|r| r.as_slice()))?;

    let mut header = vec!["time_s".to_string()];
    for s in &names[n..] {
        header.extend([s.clone(), format!("{s}_lo"), format!("{s}_hi"), format!("{s}_true")]);
    }
    let truth = &outcome.summary.truth;
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            let mut r = vec![run.times[k]];
            for (j, t) in truth.iter().enumerate() {
                let (m, s) = (run.means[(k, n + j)], run.std_devs[(k, n + j)]);
                r.extend([m, m - crate::filter::Z95 * s, m + crate::filter::Z95 * s, *t]);
            }
            r
        })
        .collect();
    write_table(&dir.join(format!("{label}_parameters.csv")), &header, rows.iter().map(|r| r.as_slice()))?;

    let mut header = vec!["time_s".to_string()];
    for s in &names[..n] {
        header.extend([format!("{s}_est"), format!("{s}_ref"), format!("{s}_lo"), format!("{s}_hi")]);
    }
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            let mut r = vec![run.times[k]];
            for i in 0..n {
                let (m, s) = (run.means[(k, i)], run.std_devs[(k, i)]);
                let reference = outcome.reference.get((k, i)).copied().unwrap_or(f64::NAN);
                r.extend([m, reference, m - crate::filter::Z95 * s, m + crate::filter::Z95 * s]);
            }
            r
        })
        .collect();
    write_table(&dir.join(format!("{label}_tracking.csv")), &header, rows.iter().map(|r| r.as_slice()))?;

    let mut header = vec!["time_s".to_string()];
    for j in 1..=o {
        header.extend([format!("y{j}_noisy"), format!("y{j}_clean"), format!("y{j}_filtered")]);
    }
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            let mut r = vec![run.times[k]];
            for j in 0..o {
                r.extend([test.observations[(k, j)], test.clean_observations[(k, j)], outcome.reconstructed[(k, j)]]);
            }
            r
        })
        .collect();
    write_table(&dir.join(format!("{label}_observations.csv")), &header, rows.iter().map(|r| r.as_slice()))?;

    write_json(&dir.join(format!("{label}_summary.json")), &outcome.summary)
}

/// Runs the online phase from serialized artifacts only. `case` restricts
/// the run to one test case label.
pub fn estimate_stage(spec: &ExperimentSpec, out: &Path, case: Option<&str>) -> Result<Vec<CaseSummary>> {
    spec.validate()?;
    let data = load_data_manifest(spec, out)?;
    let (mm, model, embedding, _) = load_model(out)?;
    if mm.data_manifest.verify(out).is_err() {
        return Err(Error::invalid("data manifest changed since training; rerun `train`"));
    }
    let expected_state = embedding.as_ref().map_or(data.n_state, |e| e.eta());
    if model.n_param() != spec.n_param() || model.n_state() != expected_state || model.n_forcing() != data.n_forcing {
        return Err(Error::shape("model dimensions differ from the simulated data"));
    }
    if let Some(label) = case {
        spec.case(label)?;
    }
    let mut summaries = Vec::new();
    for c in spec.cases.iter().filter(|c| case.is_none_or(|l| l == c.label)) {
        let record = data
            .tests
            .iter()
            .find(|t| t.label == c.label)
            .ok_or_else(|| Error::invalid(format!("no test data for case `{}`", c.label)))?;
        summaries.push(estimate_one(spec, c, record, &model, embedding.as_ref(), out)?);
    }
    Ok(summaries)
}

/// simulate, train and estimate in sequence; a failure names its stage.
pub fn experiment_stage(spec: &ExperimentSpec, out: &Path, case: Option<&str>) -> Result<Vec<CaseSummary>> {
    simulate_stage(spec, out).map_err(|e| stage("simulate", e))?;
    train_stage(spec, out).map_err(|e| stage("train", e))?;
    estimate_stage(spec, out, case).map_err(|e| stage("estimate", e))
}
