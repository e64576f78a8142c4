//! The four subcommands. Each returns a report struct and prints a
//! human-readable summary; files land in the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rclqr_core::exec::Exec;
use rclqr_core::learner::{run_seeds, Outcome, RunSetup, TrainingResult};
use rclqr_core::oracle::{evaluate, solve_reference, Certificate, Problem, SolverConfig};
use rclqr_core::plant::{ergodic_stats, ErgodicBatch, NoiseMoments, Policy};
use rclqr_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::config::{rows_of, RunConfig};
use crate::error::{CliError, CliResult};
use crate::plot::write_plot_script;
use crate::trace::{format_float, write_trace, Trace, TraceRecord};

pub const ORACLE_FILE: &str = "oracle.json";
pub const PLOT_SCRIPT: &str = "plot_trace.py";
/// Simulated steps behind the long-run estimates of `evaluate`.
pub const EVALUATE_STEPS: usize = 1_000_000;
const EVALUATE_CHAINS: usize = 8;
const EVALUATE_BURN_IN: usize = 1_000;

/// `(K, b, sigma, mu)` as written by `train` and `oracle` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub mu: f64,
}

impl PolicyFile {
    pub fn new(policy: &Policy, mu: f64) -> Self {
        PolicyFile {
            k: rows_of(&policy.k),
            b: policy.b.iter().copied().collect(),
            sigma: policy.sigma,
            mu,
        }
    }

    pub fn policy(&self) -> CliResult<Policy> {
        let k = crate::config::matrix("K", &self.k)?;
        Ok(Policy::new(k, DVector::from_column_slice(&self.b), self.sigma)?)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub mu: f64,
    pub grad_norm: f64,
    pub complementary_slackness: f64,
    pub primal_infeasibility: f64,
    pub constraint: f64,
    pub bar_iota: f64,
    pub lagrangian: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
}

impl From<&Certificate> for CertificateRecord {
    fn from(c: &Certificate) -> Self {
        CertificateRecord {
            mu: c.mu,
            grad_norm: c.grad_norm,
            complementary_slackness: c.complementary_slackness,
            primal_infeasibility: c.primal_infeasibility,
            constraint: c.constraint,
            bar_iota: c.bar_iota,
            lagrangian: c.lagrangian,
            inner_iterations: c.inner_iterations,
            outer_iterations: c.outer_iterations,
        }
    }
}

/// Contents of `oracle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub config_sha256: String,
    pub converged: bool,
    pub reason: Option<String>,
    #[serde(flatten)]
    pub policy: Option<PolicyFile>,
    pub certificate: CertificateRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
        let _ = writeln!(s, "  [{}]", row.join(" "));
    }
    s
}

fn format_vector(v: &DVector<f64>) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Clone)]
pub struct MomentsReport {
    pub moments: NoiseMoments,
    pub iota: f64,
    /// `4 tr((WQ)^2)`.
    pub trace_term: f64,
    pub bar_iota: f64,
}

pub fn cmd_moments(cfg: &RunConfig) -> CliResult<MomentsReport> {
    let moments = cfg.moments()?;
    let wq = moments.w.as_matrix() * cfg.cost.q.as_matrix();
    let trace_term = 4.0 * (&wq * &wq).trace();
    let report = MomentsReport {
        iota: cfg.cost.iota,
        bar_iota: cfg.cost.iota - moments.m4 + trace_term,
        trace_term,
        moments,
    };
    let m = &report.moments;
    println!(
        "noise moments ({} Monte Carlo samples, seed {})",
        cfg.file.noise.mc_samples, cfg.file.noise.mc_seed
    );
    println!("wbar = {}", format_vector(&m.wbar));
    print!("W =\n{}", format_matrix(m.w.as_matrix()));
    if !m.covariance_is_definite() {
        println!("  (W is singular: min eigenvalue {:.3e})", m.w.min_eigenvalue());
    }
    println!("M3 = {}", format_vector(&m.m3));
    println!("M3 standard errors = {}", format_vector(&m.m3_se));
    println!("m4 = {:.6} +- {:.6}", m.m4, m.m4_se);
    println!(
        "bar_iota = iota - m4 + 4 tr((WQ)^2) = {:.6} - {:.6} + {:.6} = {:.6} (+- {:.6})",
        report.iota, m.m4, report.trace_term, report.bar_iota, m.m4_se
    );
    Ok(report)
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub policy: Policy,
    pub mu: f64,
    pub lagrangian: f64,
    pub constraint: f64,
    pub bar_iota: f64,
    pub certificate: Certificate,
    pub path: PathBuf,
    /// `||X*(sigma) - X*(0)||_F`, when the deterministic-policy problem
    /// also solves.
    pub sigma_gap: Option<f64>,
}

fn print_certificate(c: &Certificate) {
    println!("certificate:");
    println!("  ||grad_X L||_F          = {:.3e}", c.grad_norm);
    println!("  |mu (J_c - bar_iota)|   = {:.3e}", c.complementary_slackness);
    println!("  max(0, J_c - bar_iota)  = {:.3e}", c.primal_infeasibility);
    println!(
        "  J_c = {:.6}, bar_iota = {:.6}, L = {:.6}, mu = {:.6}",
        c.constraint, c.bar_iota, c.lagrangian, c.mu
    );
    println!(
        "  iterations: {} inner, {} outer",
        c.inner_iterations, c.outer_iterations
    );
}

/// Re-solves with `sigma = 0` from the same start and reports how far the
/// deterministic optimum sits from the one at the configured `sigma`.
fn deterministic_gap(problem: &Problem, cfg: &RunConfig, x_star: &Policy) -> Option<f64> {
    if cfg.policy0.sigma == 0.0 {
        return Some(0.0);
    }
    let start = Policy::new(cfg.policy0.k.clone(), cfg.policy0.b.clone(), 0.0).ok()?;
    match solve_reference(problem, &start, &SolverConfig::default()) {
        Ok(det) => {
            let gap = (x_star.x_matrix() - det.policy.x_matrix()).norm();
            println!(
                "sigma = 0 optimum: ||X*(sigma) - X*(0)||_F = {gap:.3e}, mu*(0) = {:.9}",
                det.mu
            );
            Some(gap)
        }
        Err(e) => {
            println!("sigma = 0 problem not solved: {e}");
            None
        }
    }
}

pub fn cmd_oracle(cfg: &RunConfig, out_dir: &Path) -> CliResult<OracleReport> {
    ensure_dir(out_dir)?;
    let problem = cfg.problem()?;
    let start = evaluate(&problem, &cfg.policy0, 0.0)?;
    println!("initial policy X0 = [K0, b0]:");
    print!("{}", format_matrix(&cfg.policy0.x_matrix()));
    println!(
        "  L(X0, 0) = {:.9}, J_c(X0) = {:.9}, rho(A - B K0) = {:.6}",
        start.lagrangian,
        start.constraint,
        cfg.sys.closed_loop_radius(&cfg.policy0.k)?
    );
    print!("  P(X0) =\n{}", format_matrix(start.value.p.as_matrix()));

    let path = out_dir.join(ORACLE_FILE);
    match solve_reference(&problem, &cfg.policy0, &SolverConfig::default()) {
        Ok(sol) => {
            let ev = evaluate(&problem, &sol.policy, sol.mu)?;
            println!("reference solution X* = [K*, b*]:");
            print!("{}", format_matrix(&sol.policy.x_matrix()));
            println!("mu* = {:.9}", sol.mu);
            println!("L(X*, mu*) = {:.9}", ev.lagrangian);
            println!("J(X*) = {:.9}", ev.average_cost());
            println!("J_c(X*) = {:.9}, bar_iota = {:.9}", ev.constraint, problem.bar_iota());
            print_certificate(&sol.certificate);
            let sigma_gap = deterministic_gap(&problem, cfg, &sol.policy);
            write_json(
                &path,
                &OracleFile {
                    config_sha256: cfg.hash.clone(),
                    converged: true,
                    reason: None,
                    policy: Some(PolicyFile::new(&sol.policy, sol.mu)),
                    certificate: (&sol.certificate).into(),
                },
            )?;
            Ok(OracleReport {
                lagrangian: ev.lagrangian,
                constraint: ev.constraint,
                bar_iota: problem.bar_iota(),
                policy: sol.policy,
                mu: sol.mu,
                certificate: sol.certificate,
                path,
                sigma_gap,
            })
        }
        Err(CoreError::Solver { reason, certificate }) => {
            println!("reference solver failed: {reason}");
            print_certificate(&certificate);
            write_json(
                &path,
                &OracleFile {
                    config_sha256: cfg.hash.clone(),
                    converged: false,
                    reason: Some(reason.clone()),
                    policy: None,
                    certificate: certificate.as_ref().into(),
                },
            )?;
            Err(CliError::Solver(reason))
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedCosts {
    pub average_cost: f64,
    pub average_cost_se: f64,
    pub constraint: f64,
    pub constraint_se: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateReport {
    pub average_cost: f64,
    pub lagrangian: f64,
    pub constraint: f64,
    pub bar_iota: f64,
    /// `bar_iota - J_c(X)`; negative when the constraint is violated.
    pub slack: f64,
    pub rho: f64,
    pub simulated: SimulatedCosts,
}

pub fn cmd_evaluate(cfg: &RunConfig, policy_path: &Path, sim_steps: usize) -> CliResult<EvaluateReport> {
    let file = PolicyFile::read(policy_path)?;
    let policy = file.policy()?;
    if policy.n() != cfg.n() || policy.m() != cfg.m() {
        return Err(CliError::Dimension(format!(
            "policy is {}x{}, the system needs {}x{}",
            policy.m(),
            policy.n(),
            cfg.m(),
            cfg.n()
        )));
    }
    let rho = cfg.sys.closed_loop_radius(&policy.k)?;
    println!("policy from {}: rho(A - B K) = {rho:.6}", policy_path.display());
    if rho >= 1.0 {
        return Err(CliError::Unstable(format!(
            "policy is not stabilizing (rho = {rho}); simulation skipped"
        )));
    }
    let problem = cfg.problem()?;
    let ev = evaluate(&problem, &policy, file.mu)?;
    let costs = cfg.cost_model(&problem.moments);
    let chains = EVALUATE_CHAINS.min(sim_steps.max(1));
    let batch = ErgodicBatch {
        chains,
        steps: (sim_steps / chains).max(1),
        burn_in: EVALUATE_BURN_IN,
        seed: cfg.seed(),
    };
    let stats = ergodic_stats(
        &cfg.sys,
        &cfg.noise,
        &policy,
        batch,
        |x, u| [costs.stage_cost(x, u, 0.0), costs.constraint_sample(x)],
        Exec::default(),
    )?;
    let report = EvaluateReport {
        average_cost: ev.average_cost(),
        lagrangian: ev.lagrangian,
        constraint: ev.constraint,
        bar_iota: problem.bar_iota(),
        slack: problem.bar_iota() - ev.constraint,
        rho,
        simulated: SimulatedCosts {
            average_cost: stats.observed[0],
            average_cost_se: stats.observed_se[0],
            constraint: stats.observed[1],
            constraint_se: stats.observed_se[1],
            steps: stats.samples,
        },
    };
    let sim = &report.simulated;
    println!("                 oracle          simulated ({} steps)", sim.steps);
    println!(
        "J(X)       {:>14.6}  {:>14.6} +- {:.6}",
        report.average_cost, sim.average_cost, sim.average_cost_se
    );
    println!(
        "J_c(X)     {:>14.6}  {:>14.6} +- {:.6}",
        report.constraint, sim.constraint, sim.constraint_se
    );
    println!("bar_iota   {:>14.6}", report.bar_iota);
    println!(
        "slack      {:>14.6}  ({})",
        report.slack,
        if report.slack >= 0.0 { "feasible" } else { "violated" }
    );
    println!("L(X, mu)   {:>14.6}  at mu = {}", report.lagrangian, file.mu);
    Ok(report)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub plots: bool,
    /// Fan-out over these seeds instead of the single run seed.
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub seed: u64,
    pub outcome: Outcome,
    pub trace_path: PathBuf,
    pub results_path: PathBuf,
    pub policy: Policy,
    pub mu: f64,
    pub l_hat: f64,
    pub jc_hat: f64,
    pub reference: Option<DMatrix<f64>>,
    pub trace: Trace,
}

impl TrainReport {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }
}

#[derive(Debug, Clone, Serialize)]
struct ResultsFile {
    config_sha256: String,
    seed: u64,
    steps_completed: u64,
    outcome: String,
    #[serde(flatten)]
    policy: PolicyFile,
    l_hat: f64,
    jc_hat: f64,
    err_x: Option<f64>,
}

fn outcome_label(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Completed => "completed".into(),
        Outcome::Blowup { step, norm } => format!("blowup at step {step} (|x| = {norm:e})"),
        Outcome::NonFinite { step, what } => format!("non-finite at step {step}: {what}"),
    }
}

/// `X*` from a matching `oracle.json` in the output directory, else from a
/// fresh solve. `None` when the reference is disabled or does not exist.
fn reference_policy(cfg: &RunConfig, problem: &Problem, out_dir: &Path) -> Option<DMatrix<f64>> {
    if !cfg.file.run.reference {
        return None;
    }
    let cached = out_dir.join(ORACLE_FILE);
    if let Ok(text) = std::fs::read_to_string(&cached) {
        if let Ok(file) = serde_json::from_str::<OracleFile>(&text) {
            if file.config_sha256 == cfg.hash {
                log::info!("using reference from {}", cached.display());
                return file.policy.and_then(|p| p.policy().ok()).map(|p| p.x_matrix());
            }
        }
    }
    match solve_reference(problem, &cfg.policy0, &SolverConfig::default()) {
        Ok(sol) => Some(sol.policy.x_matrix()),
        Err(e) => {
            log::warn!("no reference solution, err_X left blank: {e}");
            None
        }
    }
}

fn trace_name(base: &str, seed: u64, fan_out: bool) -> String {
    if !fan_out {
        return base.to_string();
    }
    match base.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_seed{seed}.{ext}"),
        None => format!("{base}_seed{seed}"),
    }
}

fn to_records(
    cfg: &RunConfig,
    result: &TrainingResult,
    reference: Option<&DMatrix<f64>>,
) -> CliResult<Vec<TraceRecord>> {
    let n = cfg.n();
    result
        .trace
        .iter()
        .map(|row| {
            let k = row.x_matrix.columns(0, n).into_owned();
            Ok(TraceRecord {
                t: row.t,
                l_hat: row.l_hat,
                jc_hat: row.jc_hat,
                mu: row.mu,
                err_x: reference.map(|x| (&row.x_matrix - x).norm()),
                rho_cl: cfg.sys.closed_loop_radius(&k)?,
                x_norm: row.x_norm,
            })
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> CliResult<Vec<TrainReport>> {
    ensure_dir(&opts.out_dir)?;
    let problem = cfg.problem()?;
    let reference = reference_policy(cfg, &problem, &opts.out_dir);
    let steps = opts.steps.unwrap_or(cfg.steps());
    let setup = RunSetup {
        sys: cfg.sys.clone(),
        noise: cfg.noise.clone(),
        costs: cfg.cost_model(&problem.moments),
        policy0: cfg.policy0.clone(),
        mu0: cfg.file.policy0.mu0,
        x0: DVector::zeros(cfg.n()),
        cfg: cfg.learner.clone(),
        steps,
    };
    let fan_out = opts.seeds.is_some();
    let seeds = opts
        .seeds
        .clone()
        .unwrap_or_else(|| vec![opts.seed.unwrap_or(cfg.seed())]);
    log::info!("training {} run(s) of {steps} steps", seeds.len());
    let results = run_seeds(&setup, &seeds, Exec::default());

    let mut reports = Vec::with_capacity(seeds.len());
    let mut trace_names = Vec::with_capacity(seeds.len());
    for (seed, result) in seeds.iter().copied().zip(results) {
        let result = result?;
        let trace_file = trace_name(&cfg.file.output.trace_path, seed, fan_out);
        let trace_path = opts.out_dir.join(&trace_file);
        let results_path = opts.out_dir.join(trace_name("results.json", seed, fan_out));
        let trace = Trace {
            meta: vec![
                ("generator".into(), format!("rclqr {}", env!("CARGO_PKG_VERSION"))),
                ("config_sha256".into(), cfg.hash.clone()),
                ("seed".into(), seed.to_string()),
                ("steps".into(), steps.to_string()),
                ("record_every".into(), cfg.learner.record_every.to_string()),
                ("bar_iota".into(), format_float(problem.bar_iota())),
                ("outcome".into(), outcome_label(&result.outcome)),
            ],
            rows: to_records(cfg, &result, reference.as_ref())?,
        };
        write_trace(&trace_path, &trace)?;

        let state = &result.state;
        let err_x = reference.as_ref().map(|x| (state.policy.x_matrix() - x).norm());
        write_json(
            &results_path,
            &ResultsFile {
                config_sha256: cfg.hash.clone(),
                seed,
                steps_completed: state.t,
                outcome: outcome_label(&result.outcome),
                policy: PolicyFile::new(&state.policy, state.mu),
                l_hat: state.trackers.l_hat,
                jc_hat: state.trackers.jc_hat,
                err_x,
            },
        )?;
        println!(
            "seed {seed}: {} after {} steps; mu = {:.6}, L_hat = {:.6}, Jc_hat = {:.6}{}",
            outcome_label(&result.outcome),
            state.t,
            state.mu,
            state.trackers.l_hat,
            state.trackers.jc_hat,
            err_x.map(|e| format!(", ||X - X*||_F = {e:.6}")).unwrap_or_default()
        );
        println!("  trace: {}", trace_path.display());
        trace_names.push(trace_file);
        reports.push(TrainReport {
            seed,
            outcome: result.outcome.clone(),
            trace_path,
            results_path,
            policy: state.policy.clone(),
            mu: state.mu,
            l_hat: state.trackers.l_hat,
            jc_hat: state.trackers.jc_hat,
            reference: reference.clone(),
            trace,
        });
    }
    if opts.plots || cfg.file.output.plots {
        let script = opts.out_dir.join(PLOT_SCRIPT);
        write_plot_script(&script, &trace_names)?;
        println!("plot script: {}", script.display());
    }
    Ok(reports)
}
