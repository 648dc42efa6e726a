use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DelayEmbedding;
use crate::error::{Error, Result};
use crate::sindy::{rms_scaling, FunctionLibrary, SindyModel, SindyTrainer, StlsqOptions, TrainingReport};
use crate::systems::Trajectory;

/// One sampled dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRange {
    pub lo: f64,
    pub hi: f64,
    /// Sample `log10` uniformly instead of the value itself.
    #[serde(default)]
    pub log: bool,
}

impl SampleRange {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && (!self.log || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad sample range {self:?}")))
        }
    }

    fn map(&self, u: f64) -> f64 {
        if self.log {
            let (a, b) = (self.lo.log10(), self.hi.log10());
            10f64.powf(a + u * (b - a))
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }
}

/// One uniform draw inside each of `n` equal strata, in ascending order.
pub fn stratified_samples(range: SampleRange, n: usize, seed: u64) -> Result<Vec<f64>> {
    range.validate()?;
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| range.map((i as f64 + rng.gen::<f64>()) / n as f64))
        .collect())
}

/// Latin hypercube design: `n` points, each dimension split into `n`
/// strata visited once in a random order.
pub fn latin_hypercube(ranges: &[SampleRange], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 || ranges.is_empty() {
        return Err(Error::invalid("latin hypercube needs samples and dimensions"));
    }
    for r in ranges {
        r.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; ranges.len()]; n];
    for (j, r) in ranges.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (i, p) in perm.into_iter().enumerate() {
            out[i][j] = r.map((p as f64 + rng.gen::<f64>()) / n as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub max_degree: u32,
    #[serde(default)]
    pub include_constant: bool,
    #[serde(default = "yes")]
    pub include_forcing_linear: bool,
}

fn yes() -> bool {
    true
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            max_degree: 3,
            include_constant: false,
            include_forcing_linear: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub w: usize,
    pub zeta: usize,
    pub eta: usize,
    /// State component that is observed.
    #[serde(default)]
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub library: LibrarySpec,
    pub stlsq: StlsqOptions,
    /// Rescale every regression variable to unit RMS before fitting.
    #[serde(default = "yes")]
    pub rescale: bool,
    /// Present when only one state component is observed.
    #[serde(default)]
    pub embedding: Option<EmbeddingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub n_realizations: usize,
    pub training: TrainingReport,
    pub equations: Vec<String>,
    pub variance_explained: Option<f64>,
    /// Leading singular values of the stacked Hankel matrix.
    pub singular_spectrum: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub model: SindyModel,
    pub embedding: Option<DelayEmbedding>,
    pub report: OfflineReport,
}

/// Regression inputs of one realization: augmented states, forcing, targets.
struct Block {
    states: DMatrix<f64>,
    forcing: Option<DMatrix<f64>>,
    targets: DMatrix<f64>,
}

fn with_parameters(x: DMatrix<f64>, params: &[f64]) -> DMatrix<f64> {
    let (t, n) = x.shape();
    let mut out = x.resize_horizontally(n + params.len(), 0.0);
    for (j, p) in params.iter().enumerate() {
        out.column_mut(n + j).fill(*p);
    }
    debug_assert_eq!(out.nrows(), t);
    out
}

/// Offline phase: fits the sparse model (and the delay embedding for
/// partial observations) on simulated realizations.
///
/// Each trajectory must carry exact derivatives and, when the library has
/// parameters, the parameter values that generated it.
pub fn run_offline(trajectories: &[Trajectory], config: &OfflineConfig) -> Result<OfflineArtifacts> {
    let first = trajectories.first().ok_or_else(|| Error::invalid("no training trajectories"))?;
    let n_param = first.parameter_values.as_ref().map_or(0, |p| p.len());
    let n_forcing = first.n_forcing();
    for (i, tr) in trajectories.iter().enumerate() {
        if tr.derivatives.is_none() {
            return Err(Error::invalid(format!("trajectory {i} has no derivatives")));
        }
        if tr.parameter_values.as_ref().map_or(0, |p| p.len()) != n_param || tr.n_forcing() != n_forcing {
            return Err(Error::shape(format!("trajectory {i} differs in parameter or forcing count")));
        }
    }

    let mut embedding = None;
    let mut spectrum = Vec::new();
    let blocks: Vec<Block> = match config.embedding {
        None => trajectories
            .iter()
            .map(|tr| Block {
                states: with_parameters(tr.states.clone(), tr.parameter_values.as_deref().unwrap_or(&[])),
                forcing: tr.forcing.clone(),
                targets: tr.derivatives.clone().unwrap(),
            })
            .collect(),
        Some(spec) => {
            if spec.channel >= first.n_state() {
                return Err(Error::invalid(format!("observed channel {} out of range", spec.channel)));
            }
            let series: Vec<Vec<f64>> = trajectories.iter().map(|t| t.state_column(spec.channel)).collect();
            let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
            let (emb, spec_values) = DelayEmbedding::fit_series(&refs, spec.w, spec.zeta, spec.eta)?;
            spectrum = spec_values.into_iter().take(10).collect();
            let mut blocks = Vec::with_capacity(trajectories.len());
            for (tr, y) in trajectories.iter().zip(&series) {
                let coords = emb.project_series(y)?;
                let dy: Vec<f64> = tr.derivatives.as_ref().unwrap().column(spec.channel).iter().copied().collect();
                let targets = emb.project_series(&dy)?;
                let c = coords.nrows();
                blocks.push(Block {
                    states: with_parameters(coords, tr.parameter_values.as_deref().unwrap_or(&[])),
                    forcing: tr.forcing.as_ref().map(|f| f.rows(0, c).into_owned()),
                    targets,
                });
            }
            embedding = Some(emb);
            blocks
        }
    };

    let n_state = blocks[0].targets.ncols();
    let lib = FunctionLibrary::polynomial(
        n_state,
        n_param,
        n_forcing,
        config.library.max_degree,
        config.library.include_constant,
        config.library.include_forcing_linear && n_forcing > 0,
    )?;
    let scaling = if config.rescale {
        let states = concat_rows(blocks.iter().map(|b| &b.states));
        let mut mats = vec![&states];
        let forcing;
        if n_forcing > 0 {
            forcing = concat_rows(blocks.iter().filter_map(|b| b.forcing.as_ref()));
            mats.push(&forcing);
        }
        rms_scaling(&mats)
    } else {
        vec![1.0; n_state + n_param + n_forcing]
    };
    let mut trainer = SindyTrainer::new(lib, scaling)?;
    for b in &blocks {
        trainer.add(&b.states, b.forcing.as_ref(), &b.targets)?;
    }
    let (model, training) = trainer.finish(&config.stlsq)?;
    let report = OfflineReport {
        n_realizations: trajectories.len(),
        equations: model.equations(),
        training,
        variance_explained: embedding.as_ref().map(|e| e.variance_explained()),
        singular_spectrum: spectrum,
    };
    Ok(OfflineArtifacts {
        model,
        embedding,
        report,
    })
}

fn concat_rows<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let mats: Vec<&DMatrix<f64>> = mats.collect();
    let cols = mats.first().map_or(0, |m| m.ncols());
    let rows = mats.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for m in mats {
        out.rows_mut(off, m.nrows()).copy_from(m);
        off += m.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_covers_every_stratum() {
        let r = SampleRange { lo: 1.0, hi: 4.0, log: false };
        let s = stratified_samples(r, 16, 3).unwrap();
        for (i, v) in s.iter().enumerate() {
            let lo = 1.0 + 3.0 * i as f64 / 16.0;
            assert!(*v >= lo && *v < lo + 3.0 / 16.0);
        }
        assert_eq!(s, stratified_samples(r, 16, 3).unwrap());
    }

    #[test]
    fn latin_hypercube_one_point_per_stratum() {
        let r = SampleRange { lo: 0.005, hi: 0.5, log: true };
        let pts = latin_hypercube(&[r, r], 20, 11).unwrap();
        for j in 0..2 {
            let mut bins: Vec<usize> = pts
                .iter()
                .map(|p| ((p[j].log10() - 0.005f64.log10()) / 2.0 * 20.0).floor() as usize)
                .collect();
            bins.sort();
            assert_eq!(bins, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bad_ranges() {
        assert!(stratified_samples(SampleRange { lo: 2.0, hi: 1.0, log: false }, 3, 0).is_err());
        assert!(latin_hypercube(&[SampleRange { lo: 0.0, hi: 1.0, log: true }], 3, 0).is_err());
    }

    #[test]
    fn full_state_offline_recovers_linear_system() {
        // x' = -p x for several p: the identified model reproduces -p x.
        let mut trajs = Vec::new();
        for p in [0.5, 1.0, 2.0] {
            let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
            let x = DMatrix::from_fn(200, 1, |i, _| (-p * times[i]).exp());
            let dx = x.map(|v| -p * v);
            trajs.push(Trajectory::new(times, x, Some(dx), None, Some(vec![p])).unwrap());
        }
        let cfg = OfflineConfig {
            library: LibrarySpec { max_degree: 2, ..Default::default() },
            stlsq: StlsqOptions { threshold: 1e-3, ridge: 0.0, max_iters: 20 },
            rescale: true,
            embedding: None,
        };
        let art = run_offline(&trajs, &cfg).unwrap();
        assert_eq!(art.report.training.nnz_per_equation, vec![1]);
        let f = art.model.evaluate(&[0.3, 1.7], &[]).unwrap();
        assert!((f[0] + 0.51).abs() < 1e-9);
    }
}
