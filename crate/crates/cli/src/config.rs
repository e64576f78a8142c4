//! Run configuration: a TOML tree with matrices as row-major nested arrays.
//!
//! ```toml
//! [system]
//! A = [[1.0, 1.0], [0.0, 1.0]]
//! B = [[1.0], [1.0]]
//!
//! [cost]
//! Q = [[0.5, 0.0], [0.0, 0.1]]
//! R = [[0.2]]
//! iota = 40.0
//!
//! [noise]
//! mc_samples = 1000000
//! channels = [{ kind = "gaussian", mean = 0.0, variance = 4.0 }]
//! mapping = [[1.0], [1.0]]
//!
//! [policy0]
//! K0 = [[0.5, 1.0]]
//! sigma = 2.0
//! ```
//!
//! `[schedules]`, `[run]` and `[output]` are optional; every missing key takes
//! the default listed on its field.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rclqr_core::learner::{CostModel, CriticGain, LearnerConfig, StepSchedule};
use rclqr_core::matkit::SymMatrix;
use rclqr_core::oracle::{CostSpec, Problem};
use rclqr_core::plant::{compute_moments, Channel, NoiseMoments, NoiseSpec, Policy, SystemModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub cost: CostSection,
    pub noise: NoiseSection,
    pub policy0: PolicySection,
    #[serde(default)]
    pub schedules: ScheduleSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub iota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub channels: Vec<Channel>,
    /// `n x channels` matrix; identity when absent.
    #[serde(default)]
    pub mapping: Option<Rows>,
    /// Default 1,000,000.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Default 0.
    #[serde(default)]
    pub mc_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(rename = "K0")]
    pub k0: Rows,
    /// Zero when absent.
    #[serde(default)]
    pub b0: Option<Vec<f64>>,
    /// Default 0.5.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Default 0.
    #[serde(default)]
    pub mu0: f64,
}

/// `rate_t = scale / (1 + t / tau)^exponent`; defaults are the tuned values
/// of the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub ea: f64,
    pub eb: f64,
    pub ec: f64,
    pub tau: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = StepSchedule::default();
        ScheduleSection {
            a0: s.a0,
            b0: s.b0,
            c0: s.c0,
            ea: s.ea,
            eb: s.eb,
            ec: s.ec,
            tau: s.tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainChoice {
    Identity,
    FeatureCovariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: u64,
    pub seed: u64,
    pub record_every: u64,
    pub warmup: u64,
    pub dual_start: u64,
    pub box_bound: f64,
    pub blowup_threshold: f64,
    pub max_actor_step: f64,
    pub guard_factor: f64,
    pub critic_gain: GainChoice,
    /// Solve for `X*` before training so the trace carries `err_X`.
    pub reference: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        let l = LearnerConfig::default();
        RunSection {
            steps: 2_000_000,
            seed: 42,
            record_every: l.record_every,
            warmup: l.warmup,
            dual_start: l.dual_start,
            box_bound: l.box_bound,
            blowup_threshold: l.blowup_threshold,
            max_actor_step: l.max_actor_step,
            guard_factor: l.guard_factor,
            critic_gain: match l.critic_gain {
                CriticGain::Identity => GainChoice::Identity,
                CriticGain::FeatureCovariance => GainChoice::FeatureCovariance,
            },
            reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Relative to the output directory.
    pub trace_path: String,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            trace_path: "trace.csv".into(),
            plots: false,
        }
    }
}

fn default_mc_samples() -> usize {
    1_000_000
}

fn default_sigma() -> f64 {
    0.5
}

/// A validated configuration with the model objects built.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub source: PathBuf,
    /// SHA-256 of the resolved configuration.
    pub hash: String,
    pub sys: SystemModel,
    pub noise: NoiseSpec,
    pub cost: CostSpec,
    pub policy0: Policy,
    pub learner: LearnerConfig,
}

impl RunConfig {
    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn seed(&self) -> u64 {
        self.file.run.seed
    }

    pub fn steps(&self) -> u64 {
        self.file.run.steps
    }

    pub fn moments(&self) -> CliResult<NoiseMoments> {
        let n = &self.file.noise;
        Ok(compute_moments(&self.noise, &self.cost.q, n.mc_samples, n.mc_seed)?)
    }

    pub fn problem(&self) -> CliResult<Problem> {
        Ok(Problem::new(self.sys.clone(), self.cost.clone(), self.moments()?)?)
    }

    pub fn cost_model(&self, moments: &NoiseMoments) -> CostModel {
        CostModel::new(&self.cost, moments)
    }
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, source: &Path) -> CliResult<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", source.display())))?;
    build(file, source)
}

fn build(file: ConfigFile, source: &Path) -> CliResult<RunConfig> {
    let a = matrix("system.A", &file.system.a)?;
    let b = matrix("system.B", &file.system.b)?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CliError::Dimension(format!(
            "system.A is {}x{}, expected square",
            n,
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(CliError::Dimension(format!(
            "system.B has {} rows, A has {n}",
            b.nrows()
        )));
    }
    let m = b.ncols();
    let sys = SystemModel::new(a, b)?;

    let q = square("cost.Q", &file.cost.q, n)?;
    let r = square("cost.R", &file.cost.r, m)?;
    if !file.cost.iota.is_finite() {
        return Err(CliError::Config("cost.iota must be finite".into()));
    }
    let cost = CostSpec::new(
        SymMatrix::new(q).map_err(|e| CliError::Config(format!("cost.Q: {e}")))?,
        SymMatrix::new(r).map_err(|e| CliError::Config(format!("cost.R: {e}")))?,
        file.cost.iota,
    )?;

    let mapping = match &file.noise.mapping {
        Some(rows) => {
            let g = matrix("noise.mapping", rows)?;
            if g.nrows() != n || g.ncols() != file.noise.channels.len() {
                return Err(CliError::Dimension(format!(
                    "noise.mapping is {}x{}, expected {n}x{}",
                    g.nrows(),
                    g.ncols(),
                    file.noise.channels.len()
                )));
            }
            Some(g)
        }
        None => {
            if file.noise.channels.len() != n {
                return Err(CliError::Dimension(format!(
                    "{} noise channels for a {n}-dimensional state and no mapping",
                    file.noise.channels.len()
                )));
            }
            None
        }
    };
    let noise =
        NoiseSpec::new(file.noise.channels.clone(), mapping).map_err(|e| CliError::Config(format!("noise: {e}")))?;
    if file.noise.mc_samples < rclqr_core::plant::MIN_MC_SAMPLES {
        return Err(CliError::Config(format!(
            "noise.mc_samples must be at least {}",
            rclqr_core::plant::MIN_MC_SAMPLES
        )));
    }

    let k0 = matrix("policy0.K0", &file.policy0.k0)?;
    if k0.nrows() != m || k0.ncols() != n {
        return Err(CliError::Dimension(format!(
            "policy0.K0 is {}x{}, expected {m}x{n}",
            k0.nrows(),
            k0.ncols()
        )));
    }
    let b0 = match &file.policy0.b0 {
        Some(v) if v.len() != m => {
            return Err(CliError::Dimension(format!(
                "policy0.b0 has length {}, expected {m}",
                v.len()
            )))
        }
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(m),
    };
    if file.policy0.mu0.is_nan() || file.policy0.mu0 < 0.0 {
        return Err(CliError::Config("policy0.mu0 must be >= 0".into()));
    }
    let policy0 = Policy::new(k0, b0, file.policy0.sigma).map_err(|e| CliError::Config(format!("policy0: {e}")))?;
    let rho = sys.closed_loop_radius(&policy0.k)?;
    if rho >= 1.0 {
        return Err(CliError::Unstable(format!(
            "initial policy is not stabilizing: spectral radius of A - B K0 is {rho}"
        )));
    }

    let s = &file.schedules;
    let schedule = StepSchedule {
        a0: s.a0,
        b0: s.b0,
        c0: s.c0,
        ea: s.ea,
        eb: s.eb,
        ec: s.ec,
        tau: s.tau,
    };
    let run = &file.run;
    let learner = LearnerConfig {
        schedule,
        warmup: run.warmup,
        dual_start: run.dual_start,
        box_bound: run.box_bound,
        blowup_threshold: run.blowup_threshold,
        max_actor_step: run.max_actor_step,
        guard_factor: run.guard_factor,
        record_every: run.record_every,
        freeze_policy: false,
        critic_gain: match run.critic_gain {
            GainChoice::Identity => CriticGain::Identity,
            GainChoice::FeatureCovariance => CriticGain::FeatureCovariance,
        },
    };
    learner
        .validate()
        .map_err(|e| CliError::Config(format!("schedules/run: {e}")))?;
    if policy0.x_matrix().iter().any(|v| v.abs() > run.box_bound) {
        return Err(CliError::Config(
            "initial policy lies outside the projection box".into(),
        ));
    }

    let canonical = serde_json::to_string(&file).expect("config serializes");
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(RunConfig {
        file,
        source: source.to_path_buf(),
        hash,
        sys,
        noise,
        cost,
        policy0,
        learner,
    })
}

pub fn matrix(name: &str, rows: &Rows) -> CliResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(CliError::Dimension(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Dimension(format!("{name} has rows of different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn square(name: &str, rows: &Rows, dim: usize) -> CliResult<DMatrix<f64>> {
    let mat = matrix(name, rows)?;
    if mat.nrows() != dim || mat.ncols() != dim {
        return Err(CliError::Dimension(format!(
            "{name} is {}x{}, expected {dim}x{dim}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    Ok(mat)
}

pub fn rows_of(mat: &DMatrix<f64>) -> Rows {
    (0..mat.nrows()).map(|i| mat.row(i).iter().copied().collect()).collect()
}
