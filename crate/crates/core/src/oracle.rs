//! Model-based ground truth for a risk-constrained LQR instance: the
//! Lagrangian, its value and action-value functions, the exact policy
//! gradient, the constraint value and a reference primal-dual solver.
//!
//! Everything here uses `(A, B)` directly. The learner never calls into this
//! module except for [`stage_cost`], which only needs cost-side constants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matkit::{solve_discrete_lyapunov, svec, SymMatrix};
use crate::plant::{closed_loop_moments, ClosedLoopMoments, NoiseMoments, Policy, SystemModel};

/// State/input weights and the risk tolerance `iota`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub iota: f64,
}

impl CostSpec {
    pub fn new(q: SymMatrix, r: SymMatrix, iota: f64) -> Result<Self> {
        if q.min_eigenvalue() < -1e-12 {
            return Err(Error::invalid("Q must be positive semidefinite"));
        }
        if r.min_eigenvalue() <= 0.0 {
            return Err(Error::invalid("R must be positive definite"));
        }
        if !iota.is_finite() {
            return Err(Error::invalid("iota must be finite"));
        }
        Ok(CostSpec { q, r, iota })
    }
}

/// Plant, cost and noise statistics bundled together.
#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: SystemModel,
    pub cost: CostSpec,
    pub moments: NoiseMoments,
}

impl Problem {
    pub fn new(sys: SystemModel, cost: CostSpec, moments: NoiseMoments) -> Result<Self> {
        let n = sys.n();
        if cost.q.dim() != n || cost.r.dim() != sys.m() || moments.n() != n {
            return Err(Error::dim("system, cost and noise dimensions disagree"));
        }
        Ok(Problem { sys, cost, moments })
    }

    /// `iota - m4 + 4 tr((WQ)^2)`.
    pub fn bar_iota(&self) -> f64 {
        bar_iota(&self.cost, &self.moments)
    }
}

pub fn bar_iota(cost: &CostSpec, moments: &NoiseMoments) -> f64 {
    let wq = moments.w.as_matrix() * cost.q.as_matrix();
    cost.iota - moments.m4 + 4.0 * (&wq * &wq).trace()
}

/// Cost-side constants of the Lagrangian at a fixed multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianParams {
    /// `Q + 4 mu Q W Q`.
    pub q_mu: SymMatrix,
    /// `2 mu Q M3`.
    pub s: DVector<f64>,
    pub mu: f64,
    pub bar_iota: f64,
}

pub fn lagrangian_params(cost: &CostSpec, moments: &NoiseMoments, mu: f64) -> Result<LagrangianParams> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("multiplier must be >= 0, got {mu}")));
    }
    let q = cost.q.as_matrix();
    let qwq = q * moments.w.as_matrix() * q;
    Ok(LagrangianParams {
        q_mu: SymMatrix::symmetrize(&(q + qwq * (4.0 * mu))),
        s: q * &moments.m3 * (2.0 * mu),
        mu,
        bar_iota: bar_iota(cost, moments),
    })
}

/// `x^T Q_mu x + 2 x^T S + u^T R u - mu * bar_iota`.
pub fn stage_cost(lp: &LagrangianParams, r: &SymMatrix, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    x.dot(&(lp.q_mu.as_matrix() * x)) + 2.0 * x.dot(&lp.s) + u.dot(&(r.as_matrix() * u)) - lp.mu * lp.bar_iota
}

/// `V(x) = x^T P x + g^T x + z1`, normalized so `E_nu[V] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub p: SymMatrix,
    pub g: DVector<f64>,
    pub z1: f64,
}

impl ValueParams {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self.p.as_matrix() * x)) + self.g.dot(x) + self.z1
    }
}

/// `Q(x,u) = [x;u]^T Upsilon [x;u] + 2 [p;q]^T [x;u] + z2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    pub upsilon: SymMatrix,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub z2: f64,
    n: usize,
}

impl QParams {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.upsilon.dim() - self.n
    }

    /// Lower-right `m x m` block.
    pub fn upsilon22(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m());
        self.upsilon.view((n, n), (m, m)).into_owned()
    }

    /// Lower-left `m x n` block.
    pub fn upsilon21(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m());
        self.upsilon.view((n, 0), (m, n)).into_owned()
    }

    pub fn q_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let z = stack(x, u);
        z.dot(&(self.upsilon.as_matrix() * &z)) + 2.0 * (self.p.dot(x) + self.q.dot(u)) + self.z2
    }

    /// `[svec(Upsilon); p; q]`, the target of the TD critic.
    pub fn theta(&self) -> DVector<f64> {
        let s = svec(&self.upsilon);
        let mut out = DVector::zeros(s.entries().len() + self.p.len() + self.q.len());
        let k = s.entries().len();
        out.rows_mut(0, k).copy_from(s.entries());
        out.rows_mut(k, self.p.len()).copy_from(&self.p);
        out.rows_mut(k + self.p.len(), self.q.len()).copy_from(&self.q);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientParts {
    /// `Upsilon22 K - Upsilon21`.
    pub e: DMatrix<f64>,
    /// `Upsilon22 b + q`.
    pub g: DVector<f64>,
    /// `[E, G]`.
    pub h: DMatrix<f64>,
    /// Stationary second moment of `[x; -1]`.
    pub phi: SymMatrix,
    /// `2 H Phi`, laid out like `X = [K, b]`.
    pub grad: DMatrix<f64>,
}

/// All closed-form quantities for one `(X, mu)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub params: LagrangianParams,
    pub closed_loop: ClosedLoopMoments,
    pub value: ValueParams,
    pub qfun: QParams,
    pub lagrangian: f64,
    pub constraint: f64,
    pub gradient: GradientParts,
}

impl Evaluation {
    /// Average cost `J(X) = L(X, mu) - mu (J_c(X) - bar_iota)`.
    pub fn average_cost(&self) -> f64 {
        self.lagrangian - self.params.mu * (self.constraint - self.params.bar_iota)
    }
}

pub fn evaluate(problem: &Problem, policy: &Policy, mu: f64) -> Result<Evaluation> {
    let sys = &problem.sys;
    let (a, bm) = (sys.a(), sys.b());
    let (n, m) = (sys.n(), sys.m());
    let r = problem.cost.r.as_matrix();
    let moments = &problem.moments;
    let (k, b, sigma) = (&policy.k, &policy.b, policy.sigma);

    let lp = lagrangian_params(&problem.cost, moments, mu)?;
    let cl = closed_loop_moments(sys, moments, policy)?;
    let f = sys.closed_loop(k);

    let krk = k.transpose() * r * k;
    let stage_q = SymMatrix::symmetrize(&(lp.q_mu.as_matrix() + &krk));
    let p = solve_discrete_lyapunov(&f, &stage_q)?;
    let pm = p.as_matrix();

    let krb = k.transpose() * (r * b);
    let lin = &lp.s - &krb + f.transpose() * (pm * (bm * b + &moments.wbar));
    let g = (DMatrix::<f64>::identity(n, n) - &f)
        .transpose()
        .lu()
        .solve(&(lin * 2.0))
        .ok_or_else(|| Error::NoConvergence("I - (A - BK) is singular".into()))?;

    let xbar = &cl.xbar;
    let sig = cl.sigma.as_matrix();
    let z1 = -(pm * sig).trace() - xbar.dot(&(pm * xbar)) - g.dot(xbar);

    let lagrangian = (stage_q.as_matrix() * sig).trace()
        + xbar.dot(&(stage_q.as_matrix() * xbar))
        + 2.0 * xbar.dot(&(&lp.s - &krb))
        + sigma * sigma * r.trace()
        + b.dot(&(r * b))
        - mu * lp.bar_iota;

    let constraint = constraint_formula(&problem.cost.q, moments, xbar, &cl.sigma);

    let mut ups = DMatrix::zeros(n + m, n + m);
    ups.view_mut((0, 0), (n, n))
        .copy_from(&(lp.q_mu.as_matrix() + a.transpose() * pm * a));
    let u12 = a.transpose() * pm * bm;
    ups.view_mut((0, n), (n, m)).copy_from(&u12);
    ups.view_mut((n, 0), (m, n)).copy_from(&u12.transpose());
    ups.view_mut((n, n), (m, m)).copy_from(&(r + bm.transpose() * pm * bm));
    let upsilon = SymMatrix::symmetrize(&ups);
    let pw = pm * &moments.wbar;
    let p_lin = &lp.s + a.transpose() * &pw + a.transpose() * &g * 0.5;
    let q_lin = bm.transpose() * &pw + bm.transpose() * &g * 0.5;
    let z2 = -lagrangian - mu * lp.bar_iota
        + z1
        + g.dot(&moments.wbar)
        + moments.wbar.dot(&pw)
        + (pm * moments.w.as_matrix()).trace();
    let qfun = QParams {
        upsilon,
        p: p_lin,
        q: q_lin,
        z2,
        n,
    };

    let u22 = qfun.upsilon22();
    let e = &u22 * k - qfun.upsilon21();
    let gg = &u22 * b + &qfun.q;
    let mut h = DMatrix::zeros(m, n + 1);
    h.view_mut((0, 0), (m, n)).copy_from(&e);
    h.set_column(n, &gg);
    let phi = phi_matrix(&cl);
    let grad = &h * phi.as_matrix() * 2.0;

    Ok(Evaluation {
        params: lp,
        value: ValueParams { p, g, z1 },
        closed_loop: cl,
        qfun,
        lagrangian,
        constraint,
        gradient: GradientParts { e, g: gg, h, phi, grad },
    })
}

/// `4 tr(QWQ (Sigma + xbar xbar^T)) + 4 xbar^T Q M3`.
pub fn constraint_formula(q: &SymMatrix, moments: &NoiseMoments, xbar: &DVector<f64>, sigma: &SymMatrix) -> f64 {
    let q = q.as_matrix();
    let qwq = q * moments.w.as_matrix() * q;
    let second = sigma.as_matrix() + xbar * xbar.transpose();
    4.0 * (&qwq * &second).trace() + 4.0 * xbar.dot(&(q * &moments.m3))
}

/// `[[Sigma + xbar xbar^T, -xbar], [-xbar^T, 1]]`.
pub fn phi_matrix(cl: &ClosedLoopMoments) -> SymMatrix {
    let n = cl.xbar.len();
    let mut phi = DMatrix::zeros(n + 1, n + 1);
    phi.view_mut((0, 0), (n, n))
        .copy_from(&(cl.sigma.as_matrix() + &cl.xbar * cl.xbar.transpose()));
    for i in 0..n {
        phi[(i, n)] = -cl.xbar[i];
        phi[(n, i)] = -cl.xbar[i];
    }
    phi[(n, n)] = 1.0;
    SymMatrix::symmetrize(&phi)
}

pub fn value_params(problem: &Problem, policy: &Policy, mu: f64) -> Result<ValueParams> {
    Ok(evaluate(problem, policy, mu)?.value)
}

pub fn q_params(problem: &Problem, policy: &Policy, mu: f64) -> Result<QParams> {
    Ok(evaluate(problem, policy, mu)?.qfun)
}

pub fn lagrangian_value(problem: &Problem, policy: &Policy, mu: f64) -> Result<f64> {
    Ok(evaluate(problem, policy, mu)?.lagrangian)
}

/// Stationary `E[4 x^T QWQ x + 4 x^T Q M3]`.
pub fn constraint_value(problem: &Problem, policy: &Policy) -> Result<f64> {
    Ok(evaluate(problem, policy, 0.0)?.constraint)
}

pub fn exact_gradient(problem: &Problem, policy: &Policy, mu: f64) -> Result<GradientParts> {
    Ok(evaluate(problem, policy, mu)?.gradient)
}

pub(crate) fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stop the inner minimization once `||grad_X L||_F` falls below this.
    pub tol_inner: f64,
    /// Bound on `|mu (J_c - bar_iota)|` at termination.
    pub tol_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Largest multiplier tried before declaring the constraint infeasible.
    pub mu_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_inner: 1e-8,
            tol_outer: 1e-6,
            max_inner: 500,
            max_outer: 200,
            mu_max: 1e6,
        }
    }
}

/// Optimality evidence returned with (or instead of) a reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub mu: f64,
    pub grad_norm: f64,
    /// `|mu (J_c(X) - bar_iota)|`.
    pub complementary_slackness: f64,
    /// `max(0, J_c(X) - bar_iota)`.
    pub primal_infeasibility: f64,
    pub constraint: f64,
    pub bar_iota: f64,
    pub lagrangian: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub policy: Policy,
    pub mu: f64,
    pub certificate: Certificate,
}

/// Minimizes `L(., mu)` from `start`.
///
/// Each iteration takes the preconditioned step
/// `X <- X - s (Upsilon22)^{-1} H`, which at `s = 1` is exact policy
/// improvement on the quadratic action-value function; `s` is halved while
/// the candidate is destabilizing or increases `L`.
pub fn minimize_lagrangian(
    problem: &Problem,
    start: &Policy,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<(Policy, Evaluation, usize)> {
    let mut policy = start.clone();
    let mut eval = evaluate(problem, &policy, mu)?;
    for iter in 0..cfg.max_inner {
        if eval.gradient.grad.norm() < cfg.tol_inner {
            return Ok((policy, eval, iter));
        }
        let u22 = eval.qfun.upsilon22();
        let dir = u22
            .lu()
            .solve(&eval.gradient.h)
            .ok_or_else(|| Error::NoConvergence("Upsilon22 is singular".into()))?;
        let x = policy.x_matrix();
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = Policy::from_x_matrix(&(&x - &dir * s), policy.sigma)?;
            if let Ok(ev) = evaluate(problem, &cand, mu) {
                if ev.lagrangian <= eval.lagrangian + 1e-12 * (1.0 + eval.lagrangian.abs()) {
                    accepted = Some((cand, ev));
                    break;
                }
            }
            s *= 0.5;
        }
        match accepted {
            Some((p, ev)) => {
                let stalled = (&p.x_matrix() - &x).norm() == 0.0;
                policy = p;
                eval = ev;
                if stalled {
                    return Ok((policy, eval, iter + 1));
                }
            }
            // Round-off floor: no representable descent step left.
            None => return Ok((policy, eval, iter + 1)),
        }
    }
    Ok((policy, eval, cfg.max_inner))
}

/// Reference primal-dual solution of `max_{mu >= 0} min_X L(X, mu)`.
///
/// The dual function is concave in `mu` and `J_c(X_mu)` is nonincreasing, so
/// the multiplier is found by bracketing the root of `J_c(X_mu) - bar_iota`
/// (or returning `mu = 0` when the unconstrained minimizer is feasible).
pub fn solve_reference(problem: &Problem, initial: &Policy, cfg: &SolverConfig) -> Result<ReferenceSolution> {
    let bar_iota = problem.bar_iota();
    let inner_total = std::cell::Cell::new(0);
    let mut outer = 0;

    let solve_at = |mu: f64, start: &Policy| -> Result<(Policy, Evaluation)> {
        let (p, e, it) = minimize_lagrangian(problem, start, mu, cfg)?;
        inner_total.set(inner_total.get() + it);
        Ok((p, e))
    };

    let certificate = |mu: f64, e: &Evaluation, inner: usize, outer: usize| Certificate {
        mu,
        grad_norm: e.gradient.grad.norm(),
        complementary_slackness: (mu * (e.constraint - bar_iota)).abs(),
        primal_infeasibility: (e.constraint - bar_iota).max(0.0),
        constraint: e.constraint,
        bar_iota,
        lagrangian: e.lagrangian,
        inner_iterations: inner,
        outer_iterations: outer,
    };

    let (p0, e0) = solve_at(0.0, initial)?;
    if e0.constraint <= bar_iota {
        let cert = certificate(0.0, &e0, inner_total.get(), 0);
        return finish(p0, 0.0, cert, cfg);
    }

    // Bracket: slack(lo) > 0 >= slack(hi).
    let (mut lo, mut f_lo) = (0.0, e0.constraint - bar_iota);
    let mut lo_policy = p0;
    let mut hi = 1.0;
    let (mut hi_policy, mut hi_eval) = solve_at(hi, &lo_policy)?;
    while hi_eval.constraint > bar_iota {
        outer += 1;
        if hi >= cfg.mu_max || outer > cfg.max_outer {
            let cert = certificate(hi, &hi_eval, inner_total.get(), outer);
            return Err(Error::Solver {
                reason: format!(
                    "risk constraint appears infeasible: J_c = {:.6} > bar_iota = {:.6} even at mu = {hi:e}",
                    hi_eval.constraint, bar_iota
                ),
                certificate: Box::new(cert),
            });
        }
        lo = hi;
        f_lo = hi_eval.constraint - bar_iota;
        lo_policy = hi_policy;
        hi *= 4.0;
        (hi_policy, hi_eval) = solve_at(hi, &lo_policy)?;
    }
    let mut f_hi = hi_eval.constraint - bar_iota;

    // Illinois false position on the bracket, always keeping the feasible end.
    let mut side = 0i8;
    loop {
        let cert = certificate(hi, &hi_eval, inner_total.get(), outer);
        if cert.complementary_slackness < 0.5 * cfg.tol_outer || hi - lo <= 1e-15 * hi {
            return finish(hi_policy, hi, cert, cfg);
        }
        outer += 1;
        if outer > cfg.max_outer {
            return Err(Error::Solver {
                reason: "multiplier search exceeded its iteration budget".into(),
                certificate: Box::new(cert),
            });
        }
        let mut mid = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let (p_mid, e_mid) = solve_at(mid, &hi_policy)?;
        let f_mid = e_mid.constraint - bar_iota;
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            f_hi = f_mid;
            hi_policy = p_mid;
            hi_eval = e_mid;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
}

fn finish(policy: Policy, mu: f64, cert: Certificate, cfg: &SolverConfig) -> Result<ReferenceSolution> {
    if !(cert.grad_norm < cfg.tol_inner.max(1e-6)) {
        return Err(Error::Solver {
            reason: format!("inner minimization stalled at ||grad|| = {:e}", cert.grad_norm),
            certificate: Box::new(cert),
        });
    }
    Ok(ReferenceSolution {
        policy,
        mu,
        certificate: cert,
    })
}
