//! Acceptance suite. Prints one verdict line per criterion and exits non-zero
//! if any criterion fails for a reason other than the diagnosed infeasibility
//! of the literal constraint level.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rclqr_cli::commands::{cmd_train, TrainOptions, TrainReport};
use rclqr_cli::{load_config, parse_config, CliError, Exit, RunConfig};
use rclqr_core::learner::{train, CostModel, CriticGain, LearnerConfig, LearnerState, PlantEnv, StepSchedule};
use rclqr_core::matkit::{lyapunov_residual, smat, solve_discrete_lyapunov, spectral_radius, svec, SymMatrix};
use rclqr_core::oracle::{
    constraint_value, evaluate, exact_gradient, lagrangian_value, solve_reference, stage_cost, CostSpec, Problem,
    SolverConfig,
};
use rclqr_core::plant::{compute_moments, seeded_rng, stream_rng, Channel, NoiseSpec, Policy, SimRng, SystemModel};
use rclqr_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// Fails on the literal constraint level, which is verified to be
    /// unattainable by any stabilizing policy.
    Infeasible,
}

struct Verdict {
    status: Status,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            status: Status::Pass,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        if !ok {
            self.status = Status::Fail;
        }
        self.note(ok, line);
    }

    fn note(&mut self, ok: bool, line: String) {
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name);
    load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn within(elapsed: Duration, limit_secs: u64) -> (bool, String) {
    (
        elapsed.as_secs() < limit_secs,
        format!("runtime {:.2} s (limit {limit_secs} s)", elapsed.as_secs_f64()),
    )
}

fn random_symmetric(d: usize, rng: &mut SimRng) -> SymMatrix {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&m)
}

fn random_stable_policy(
    problem: &Problem,
    center: &DMatrix<f64>,
    spread: f64,
    b_range: f64,
    sigma: f64,
    rng: &mut SimRng,
) -> Policy {
    let (n, m) = (problem.sys.n(), problem.sys.m());
    loop {
        let k = DMatrix::from_fn(m, n, |i, j| center[(i, j)] + rng.random_range(-spread..spread));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-b_range..b_range));
        let policy = Policy::new(k, b, sigma).unwrap();
        if problem.sys.closed_loop_radius(&policy.k).unwrap() <= 0.95 {
            return policy;
        }
    }
}

fn random_vector(n: usize, scale: f64, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

// ------------------------------------------------------------------ 1

fn svec_isometry() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let mut rng = seeded_rng(101);
    let (mut inner, mut round) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let d = rng.random_range(1..=8);
        let a = random_symmetric(d, &mut rng);
        let b = random_symmetric(d, &mut rng);
        let frobenius: f64 = a.as_matrix().component_mul(b.as_matrix()).sum();
        inner = inner.max((svec(&a).dot(&svec(&b)) - frobenius).abs());
        round = round.max((smat(&svec(&a)).as_matrix() - a.as_matrix()).amax());
    }
    v.check(
        inner <= 1e-12,
        format!("max inner-product error {inner:.2e} (<= 1e-12)"),
    );
    v.check(round <= 1e-14, format!("max round-trip error {round:.2e} (<= 1e-14)"));
    let (ok, line) = within(start.elapsed(), 1);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 2

fn lyapunov() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let mut rng = seeded_rng(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let radius = spectral_radius(&raw).unwrap();
        let f = raw * (rng.random_range(0.0..0.95) / radius.max(1e-12));
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let c = SymMatrix::symmetrize(&(&g * g.transpose() + DMatrix::identity(d, d) * 0.1));
        let p = solve_discrete_lyapunov(&f, &c).unwrap();
        let scaled = lyapunov_residual(&f, &c, &p) / (1.0 + p.as_matrix().norm());
        worst = worst.max(scaled);
    }
    v.check(
        worst <= 1e-10,
        format!("max residual / (1 + |P|) {worst:.2e} (<= 1e-10)"),
    );
    let p = solve_discrete_lyapunov(&DMatrix::from_element(1, 1, 0.5), &SymMatrix::identity(1)).unwrap();
    let err = (p.as_matrix()[(0, 0)] - 4.0 / 3.0).abs();
    v.check(
        err <= 1e-12,
        format!(
            "scalar F = 0.5, C = 1: P = {:.15}, error {err:.1e}",
            p.as_matrix()[(0, 0)]
        ),
    );
    let (ok, line) = within(start.elapsed(), 5);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 3

fn finite_difference_gradient(problem: &Problem, policy: &Policy, mu: f64) -> DMatrix<f64> {
    const H: f64 = 1e-5;
    let x = policy.x_matrix();
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[(i, j)] += H;
        minus[(i, j)] -= H;
        let lp = lagrangian_value(problem, &Policy::from_x_matrix(&plus, policy.sigma).unwrap(), mu).unwrap();
        let lm = lagrangian_value(problem, &Policy::from_x_matrix(&minus, policy.sigma).unwrap(), mu).unwrap();
        (lp - lm) / (2.0 * H)
    })
}

fn gradient_identity(twin: &RunConfig, scalar: &RunConfig) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let mut rng = seeded_rng(103);
    for (name, cfg, spread, b_range) in [("twin", twin, 0.15, 5.0), ("scalar", scalar, 0.5, 2.0)] {
        let problem = cfg.problem().unwrap();
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let policy = random_stable_policy(&problem, &cfg.policy0.k, spread, b_range, cfg.policy0.sigma, &mut rng);
            let mu = rng.random_range(0.0..2.0);
            let exact = exact_gradient(&problem, &policy, mu).unwrap().grad;
            let fd = finite_difference_gradient(&problem, &policy, mu);
            for (e, a) in exact.iter().zip(fd.iter()) {
                worst = worst.max((e - a).abs() / e.abs().max(1e-8));
            }
        }
        v.check(
            worst < 1e-5,
            format!("{name}: max componentwise relative error {worst:.2e} (< 1e-5)"),
        );
    }
    let (ok, line) = within(start.elapsed(), 10);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 4

fn bellman_residuals(twin: &RunConfig) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let problem = twin.problem().unwrap();
    let (sys, mom, r) = (&problem.sys, &problem.moments, &problem.cost.r);
    let mut rng = seeded_rng(104);
    let (mut worst_v, mut worst_q) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let policy = random_stable_policy(&problem, &twin.policy0.k, 0.15, 5.0, twin.policy0.sigma, &mut rng);
        let mu = rng.random_range(0.0..2.0);
        let ev = evaluate(&problem, &policy, mu).unwrap();
        let s2 = policy.sigma * policy.sigma;
        let p = ev.value.p.as_matrix();
        for _ in 0..50 {
            let x = random_vector(sys.n(), 5.0, &mut rng);
            let u = random_vector(sys.m(), 5.0, &mut rng);

            let u_mean = policy.mean_action(&x);
            let next_mean = sys.a() * &x + sys.b() * &u_mean + &mom.wbar;
            let next_cov = mom.w.as_matrix() + sys.b() * sys.b().transpose() * s2;
            let rhs = stage_cost(&ev.params, r, &x, &u_mean) + s2 * r.as_matrix().trace() - ev.lagrangian
                + ev.value.value(&next_mean)
                + (p * next_cov).trace();
            worst_v = worst_v.max((ev.value.value(&x) - rhs).abs());

            let next_mean = sys.a() * &x + sys.b() * &u + &mom.wbar;
            let rhs = stage_cost(&ev.params, r, &x, &u) - ev.lagrangian
                + ev.value.value(&next_mean)
                + (p * mom.w.as_matrix()).trace();
            worst_q = worst_q.max((ev.qfun.q_value(&x, &u) - rhs).abs());
        }
    }
    v.check(worst_v < 1e-8, format!("max value residual {worst_v:.2e} (< 1e-8)"));
    v.check(
        worst_q < 1e-8,
        format!("max action-value residual {worst_q:.2e} (< 1e-8)"),
    );
    let (ok, line) = within(start.elapsed(), 10);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 5

struct CriticErrors {
    l: f64,
    upsilon: f64,
    phi: f64,
    jc: f64,
}

impl CriticErrors {
    fn as_array(&self) -> [f64; 4] {
        [self.l, self.upsilon, self.phi, self.jc]
    }
}

fn critic_convergence() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let sys = SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.5]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    let noise = NoiseSpec::new(
        vec![
            Channel::Gaussian {
                mean: 0.2,
                variance: 0.25,
            },
            Channel::Uniform { lo: -0.5, hi: 0.5 },
        ],
        None,
    )
    .unwrap();
    let q = SymMatrix::from_diagonal(&[1.0, 0.5]);
    let moments = compute_moments(&noise, &q, 1_000_000, 3).unwrap();
    let cost = CostSpec::new(q, SymMatrix::identity(1), 5.0).unwrap();
    let problem = Problem::new(sys.clone(), cost, moments).unwrap();
    let policy = Policy::new(
        DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
        DVector::from_element(1, 0.3),
        1.0,
    )
    .unwrap();
    let mu = 0.5;
    let ev = evaluate(&problem, &policy, mu).unwrap();
    let costs = CostModel::new(&problem.cost, &problem.moments);
    let cfg = LearnerConfig {
        schedule: StepSchedule {
            a0: 0.2,
            ea: 0.75,
            tau: 1.0,
            ..StepSchedule::default()
        },
        freeze_policy: true,
        critic_gain: CriticGain::Identity,
        ..LearnerConfig::default()
    };
    let seed = 42;
    let mut env = PlantEnv::new(sys, noise, stream_rng(seed, 0)).unwrap();
    let mut state = LearnerState::new(policy, mu, DVector::zeros(2), seed).unwrap();

    let ups = ev.qfun.upsilon.as_matrix();
    let phi = ev.gradient.phi.as_matrix();
    let mut errors = Vec::new();
    let mut done = 0;
    for checkpoint in [10_000u64, 1_000_000] {
        let res = train(state, &mut env, &costs, &cfg, checkpoint - done).unwrap();
        assert!(matches!(res.outcome, rclqr_core::learner::Outcome::Completed));
        state = res.state;
        done = checkpoint;
        errors.push(CriticErrors {
            l: (state.trackers.l_hat - ev.lagrangian).abs() / ev.lagrangian.abs(),
            upsilon: (state.critic.upsilon_hat() - ups).norm() / ups.norm(),
            phi: (&state.trackers.phi_hat - phi).norm() / phi.norm(),
            jc: (state.trackers.jc_hat - ev.constraint).abs() / ev.constraint.abs(),
        });
    }
    let (early, late) = (&errors[0], &errors[1]);
    v.check(late.l < 0.05, format!("L_hat relative error {:.4} (< 0.05)", late.l));
    v.check(
        late.upsilon < 0.10,
        format!("Upsilon_hat relative error {:.4} (< 0.10)", late.upsilon),
    );
    v.check(
        late.phi < 0.05,
        format!("Phi_hat relative error {:.4} (< 0.05)", late.phi),
    );
    v.check(late.jc < 0.05, format!("Jc_hat relative error {:.4} (< 0.05)", late.jc));
    let decreased = early.as_array().iter().zip(late.as_array()).all(|(e, l)| l < *e);
    v.check(
        decreased,
        format!(
            "errors at 1e4 steps [{:.4}, {:.4}, {:.4}, {:.4}] strictly above those at 1e6",
            early.l, early.upsilon, early.phi, early.jc
        ),
    );
    let (ok, line) = within(start.elapsed(), 120);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 6

/// Lower bound on `J_c(X)` over all stabilizing `X`: the stationary
/// covariance dominates that of `w + sigma B eta`, and the mean term is
/// minimized over all of `R^n`.
fn constraint_floor(problem: &Problem, sigma: f64) -> f64 {
    let q = problem.cost.q.as_matrix();
    let (w, m3) = (problem.moments.w.as_matrix(), &problem.moments.m3);
    let b = problem.sys.b();
    let qwq = q * w * q;
    let zeta = w + b * b.transpose() * (sigma * sigma);
    let c = q * m3;
    let pinv = qwq.clone().pseudo_inverse(1e-10).unwrap();
    4.0 * (&qwq * zeta).trace() - c.dot(&(pinv * &c))
}

fn kkt_check(v: &mut Verdict, label: &str, cfg: &RunConfig) {
    let problem = cfg.problem().unwrap();
    let sol = solve_reference(&problem, &cfg.policy0, &SolverConfig::default()).unwrap();
    let grad = exact_gradient(&problem, &sol.policy, sol.mu).unwrap().grad.norm();
    let jc = constraint_value(&problem, &sol.policy).unwrap();
    let slack = (sol.mu * (jc - problem.bar_iota())).abs();
    v.check(grad < 1e-6, format!("{label}: |grad_X L|_F = {grad:.2e} (< 1e-6)"));
    v.check(
        slack < 1e-5,
        format!(
            "{label}: |mu* (J_c - bar_iota)| = {slack:.2e} (< 1e-5), mu* = {:.6}",
            sol.mu
        ),
    );
    v.check(
        jc <= problem.bar_iota() + 1e-6,
        format!(
            "{label}: J_c(X*) = {jc:.6} <= bar_iota + 1e-6 = {:.6}",
            problem.bar_iota() + 1e-6
        ),
    );
}

fn riccati_gain(problem: &Problem) -> DMatrix<f64> {
    let (a, b) = (problem.sys.a(), problem.sys.b());
    let (q, r) = (problem.cost.q.as_matrix(), problem.cost.r.as_matrix());
    let mut p = q.clone();
    for _ in 0..100_000 {
        let gain = (r + b.transpose() * &p * b)
            .lu()
            .solve(&(b.transpose() * &p * a))
            .unwrap();
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let delta = (&next - &p).norm();
        p = next;
        if delta < 1e-14 * p.norm() {
            break;
        }
    }
    (r + b.transpose() * &p * b)
        .lu()
        .solve(&(b.transpose() * &p * a))
        .unwrap()
}

/// Returns the literal configuration's constraint floor when the literal
/// level is confirmed unattainable.
fn reference_kkt(literal: &RunConfig) -> (Verdict, Option<f64>) {
    let mut v = Verdict::new();
    let start = Instant::now();
    let problem = literal.problem().unwrap();
    let floor = constraint_floor(&problem, literal.policy0.sigma);
    let diagnosed = match solve_reference(&problem, &literal.policy0, &SolverConfig::default()) {
        Ok(sol) => {
            v.note(true, format!("literal: solver converged with mu* = {}", sol.mu));
            false
        }
        Err(CoreError::Solver { reason, certificate }) => {
            v.note(
                false,
                format!("literal (iota = {}): solver reports {reason}", literal.cost.iota),
            );
            v.note(
                false,
                format!(
                    "literal: at mu = {:.0e} J_c = {:.4} > bar_iota = {:.4}, |grad| = {:.1e}",
                    certificate.mu, certificate.constraint, certificate.bar_iota, certificate.grad_norm
                ),
            );
            v.note(
                floor > problem.bar_iota(),
                format!(
                    "literal: analytic floor min J_c >= {floor:.4} vs bar_iota = {:.4}",
                    problem.bar_iota()
                ),
            );
            certificate.primal_infeasibility > 0.0 && floor > problem.bar_iota()
        }
        Err(e) => {
            v.check(false, format!("literal: unexpected error {e}"));
            false
        }
    };

    kkt_check(
        &mut v,
        "feasible (iota = 200)",
        &config("twin_integrator_feasible.toml"),
    );

    let unconstrained = config("twin_integrator_unconstrained.toml");
    let problem = unconstrained.problem().unwrap();
    let sol = solve_reference(&problem, &unconstrained.policy0, &SolverConfig::default()).unwrap();
    let gap = (&sol.policy.k - riccati_gain(&problem)).norm();
    v.check(
        gap < 1e-6 && sol.mu == 0.0,
        format!(
            "unconstrained: |K* - K_riccati|_F = {gap:.2e} (< 1e-6), mu* = {}",
            sol.mu
        ),
    );
    let (ok, line) = within(start.elapsed(), 60);
    v.check(ok, line);

    if v.status == Status::Pass {
        if diagnosed {
            v.status = Status::Infeasible;
        } else {
            v.status = Status::Fail;
            v.lines
                .push("FAIL literal: expected the solver to certify infeasibility".into());
        }
    }
    (v, diagnosed.then_some(floor))
}

// ------------------------------------------------------------------ 7, 8

struct RunChecks {
    relative_error: Option<f64>,
    slope: Option<f64>,
    l_dev: f64,
    jc_dev: f64,
    mu_spread: f64,
    jc_ratio: f64,
}

fn train_config(cfg: &RunConfig, dir: &Path) -> TrainReport {
    let opts = TrainOptions {
        out_dir: dir.to_path_buf(),
        seed: Some(42),
        steps: Some(2_000_000),
        plots: false,
        seeds: None,
    };
    cmd_train(cfg, &opts).unwrap().pop().unwrap()
}

fn run_checks(cfg: &RunConfig, report: &TrainReport) -> RunChecks {
    let problem = cfg.problem().unwrap();
    let ev = evaluate(&problem, &report.policy, report.mu).unwrap();
    let rows = &report.trace.rows;
    let tail = &rows[rows.len() - rows.len() / 10..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.mu), hi.max(r.mu))
    });
    let (relative_error, slope) = match &report.reference {
        Some(x_star) => {
            let e0 = (cfg.policy0.x_matrix() - x_star).norm();
            let et = (report.policy.x_matrix() - x_star).norm();
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| r.err_x.map(|e| (r.t as f64, e.ln())))
                .collect();
            (Some(et / e0), Some(regression_slope(&points)))
        }
        None => (None, None),
    };
    RunChecks {
        relative_error,
        slope,
        l_dev: (report.l_hat - ev.lagrangian).abs() / ev.lagrangian.abs(),
        jc_dev: (report.jc_hat - ev.constraint).abs() / ev.constraint.abs(),
        mu_spread: (hi - lo) / report.mu,
        jc_ratio: ev.constraint / problem.bar_iota(),
    }
}

fn regression_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn record_checks(v: &mut Verdict, label: &str, c: &RunChecks, strict: bool) {
    let mut put = |ok: bool, line: String| {
        if strict {
            v.check(ok, line)
        } else {
            v.note(ok, line)
        }
    };
    match (c.relative_error, c.slope) {
        (Some(rel), Some(slope)) => {
            put(
                rel < 0.15,
                format!("{label} (a) |X_T - X*| / |X_0 - X*| = {rel:.4} (< 0.15)"),
            );
            put(
                slope < 0.0,
                format!("{label} (a) log-error regression slope {slope:.3e} per step (< 0)"),
            );
        }
        _ => put(
            false,
            format!("{label} (a) no saddle point X* exists to measure against"),
        ),
    }
    put(
        c.l_dev < 0.10,
        format!("{label} (b) |L_hat - L| / |L| = {:.4} (< 0.10)", c.l_dev),
    );
    put(
        c.jc_dev < 0.10,
        format!("{label} (c) |Jc_hat - J_c| / |J_c| = {:.4} (< 0.10)", c.jc_dev),
    );
    put(
        c.mu_spread < 0.05,
        format!(
            "{label} (d) mu spread over last 10% = {:.4} of final (< 0.05)",
            c.mu_spread
        ),
    );
    put(
        c.jc_ratio <= 1.05,
        format!("{label} (e) J_c(X_T) / bar_iota = {:.4} (<= 1.05)", c.jc_ratio),
    );
}

fn end_to_end(literal: &RunConfig, feasible: &RunConfig, floor: Option<f64>) -> (Verdict, [TrainReport; 2]) {
    let mut v = Verdict::new();
    let start = Instant::now();

    let literal_run = train_config(literal, &out_dir("c7_literal"));
    let checks = run_checks(literal, &literal_run);
    record_checks(&mut v, "literal", &checks, false);
    let literal_done = literal_run.completed();
    v.check(literal_done, format!("literal: run outcome {:?}", literal_run.outcome));
    // On the literal level the constraint cannot hold; (e) must fail by at
    // least the floor, otherwise the diagnosis is wrong.
    let problem = literal.problem().unwrap();
    let explained = floor.is_some_and(|f| checks.jc_ratio * problem.bar_iota() >= f - 1e-9);
    v.note(
        explained,
        format!(
            "literal: J_c(X_T) = {:.4} respects the floor {:.4}",
            checks.jc_ratio * problem.bar_iota(),
            floor.unwrap_or(f64::NAN)
        ),
    );

    let feasible_run = train_config(feasible, &out_dir("c7_feasible"));
    v.check(
        feasible_run.completed(),
        format!("feasible: run outcome {:?}", feasible_run.outcome),
    );
    let checks = run_checks(feasible, &feasible_run);
    record_checks(&mut v, "feasible (iota = 200)", &checks, true);

    let (ok, line) = within(start.elapsed(), 600);
    v.check(ok, line);
    if v.status == Status::Pass {
        v.status = if explained { Status::Infeasible } else { Status::Fail };
    }
    (v, [literal_run, feasible_run])
}

fn determinism(literal: &RunConfig, feasible: &RunConfig, first: &[TrainReport; 2]) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    for ((label, cfg), earlier) in [("literal", literal), ("feasible", feasible)].into_iter().zip(first) {
        let again = train_config(cfg, &out_dir(&format!("c8_{label}")));
        let a = std::fs::read(&earlier.trace_path).unwrap();
        let b = std::fs::read(&again.trace_path).unwrap();
        v.check(
            a == b,
            format!(
                "{label}: repeated seed-42 trace is bit-identical ({} bytes, {} rows)",
                a.len(),
                again.trace.rows.len()
            ),
        );
    }
    let (ok, line) = within(start.elapsed(), 600);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ 9

fn schedule_contract(scalar_text: &str) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let schedule = StepSchedule::default();
    v.check(
        schedule.validate().is_ok(),
        format!("default schedule {schedule:?} validates"),
    );
    let mut monotone = true;
    let mut ratios = true;
    let (mut ab, mut gb) = (f64::INFINITY, f64::INFINITY);
    let (mut prev_a, mut prev_b, mut prev_c) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for t in 0..1_000_000u64 {
        let (a, b, c) = (schedule.alpha(t), schedule.beta(t), schedule.gamma(t));
        monotone &= a <= prev_a && b <= prev_b && c <= prev_c && a > 0.0 && b > 0.0 && c > 0.0;
        ratios &= b / a < ab && c / b < gb;
        (prev_a, prev_b, prev_c, ab, gb) = (a, b, c, b / a, c / b);
    }
    v.check(
        monotone,
        "alpha, beta, gamma positive and non-increasing over 1e6 indices".into(),
    );
    v.check(
        ratios,
        format!(
            "beta/alpha and gamma/beta strictly decreasing over 1e6 indices (to {ab:.3e}, {gb:.3e}); exponent gaps {:.2}, {:.2}",
            schedule.eb - schedule.ea,
            schedule.ec - schedule.eb
        ),
    );

    let source = Path::new("scalar.toml");
    let base = parse_config(scalar_text, source).unwrap();
    let mut rejected = 0;
    let cases = [
        (0.75, 0.75, 0.95),
        (0.9, 0.85, 0.95),
        (0.75, 0.96, 0.95),
        (0.5, 0.85, 0.95),
        (0.75, 0.85, 1.1),
    ];
    for (ea, eb, ec) in cases {
        let text = scalar_text
            .replace("ea = 0.75", &format!("ea = {ea}"))
            .replace("eb = 0.85", &format!("eb = {eb}"))
            .replace("ec = 0.95", &format!("ec = {ec}"));
        match parse_config(&text, source) {
            Err(e @ CliError::Config(_)) if e.to_string().contains("exponents") && e.exit() == Exit::Config => {
                rejected += 1
            }
            other => v.check(
                false,
                format!("exponents ({ea}, {eb}, {ec}) gave {:?}", other.map(|c| c.hash)),
            ),
        }
    }
    v.check(
        rejected == cases.len() && base.learner.schedule.validate().is_ok(),
        format!(
            "{rejected}/{} invalid exponent orderings rejected at load with exit 2",
            cases.len()
        ),
    );
    let (ok, line) = within(start.elapsed(), 1);
    v.check(ok, line);
    v
}

// ------------------------------------------------------------------ main

fn report(id: u8, name: &str, verdict: &Verdict) {
    let status = match verdict.status {
        Status::Pass => "PASS".to_string(),
        Status::Fail => "FAIL".to_string(),
        Status::Infeasible => {
            "FAIL (literal iota = 40 infeasible; diagnosis and feasible variant verified)".to_string()
        }
    };
    println!("criterion {id} {name:<28} {status}");
    for line in &verdict.lines {
        println!("    {line}");
    }
}

fn main() -> ExitCode {
    let scalar_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scalar.toml");
    let scalar_text = std::fs::read_to_string(&scalar_path).unwrap();
    let literal = config("twin_integrator.toml");
    let feasible = config("twin_integrator_feasible.toml");
    let scalar = config("scalar.toml");

    let mut verdicts = Vec::new();
    let mut record = |id: u8, name: &str, verdict: Verdict| {
        report(id, name, &verdict);
        verdicts.push(verdict.status);
    };
    record(1, "svec isometry", svec_isometry());
    record(2, "lyapunov solver", lyapunov());
    record(3, "gradient identity", gradient_identity(&literal, &scalar));
    record(4, "bellman residuals", bellman_residuals(&literal));
    record(5, "critic convergence", critic_convergence());
    let (kkt, floor) = reference_kkt(&literal);
    record(6, "reference solver kkt", kkt);
    let (e2e, runs) = end_to_end(&literal, &feasible, floor);
    record(7, "end-to-end training", e2e);
    record(8, "determinism", determinism(&literal, &feasible, &runs));
    record(9, "step-schedule contract", schedule_contract(&scalar_text));

    let failed = verdicts.iter().filter(|s| **s == Status::Fail).count();
    let infeasible = verdicts.iter().filter(|s| **s == Status::Infeasible).count();
    println!(
        "acceptance: {} pass, {infeasible} fail on the infeasible literal level, {failed} fail",
        verdicts.len() - failed - infeasible
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
