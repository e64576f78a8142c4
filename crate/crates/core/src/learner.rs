//! Model-free multi-time-scale actor-critic for risk-constrained LQR.
//!
//! Per step the learner acts, observes the next state and the Lagrangian
//! stage cost, and then runs three coupled stochastic approximations:
//!
//! * critic (fastest, step `alpha_t`): average-cost TD(0) on the quadratic
//!   feature `psi(x,u) = [svec([x;u][x;u]^T); 2x; 2u]`, plus running averages
//!   of the Lagrangian, of `[x;-1][x;-1]^T` and of the constraint integrand;
//! * actor (step `beta_t`): projected descent along `H_hat Phi_hat`, with `H_hat`
//!   read off the critic's quadratic kernel;
//! * dual (slowest, step `gamma_t`): projected ascent on the multiplier.
//!
//! The plant matrices are never read here; the learner only sees states
//! through an [`Environment`]. Cost-side constants (`Q`, `R`, `W`, `M3`,
//! `bar_iota`) are treated as known, see [`CostModel`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matkit::{project_box, smat_slice, svec_len};
use crate::oracle::{bar_iota, CostSpec};
use crate::plant::{stream_rng, NoiseMoments, NoiseSpec, Policy, SimRng, SystemModel};

/// `d(d+1)/2 + n + m` with `d = n + m`.
pub fn feature_len(n: usize, m: usize) -> usize {
    svec_len(n + m) + n + m
}

/// `psi(x, u) = [svec(z z^T); 2x; 2u]`, `z = [x; u]`.
pub fn feature(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(feature_len(x.len(), u.len()));
    feature_into(x.as_slice(), u.as_slice(), out.as_mut_slice());
    out
}

pub(crate) fn feature_into(x: &[f64], u: &[f64], out: &mut [f64]) {
    let (n, m) = (x.len(), u.len());
    let z = |i: usize| if i < n { x[i] } else { u[i - n] };
    let d = n + m;
    let mut k = 0;
    for i in 0..d {
        let zi = z(i);
        out[k] = zi * zi;
        k += 1;
        for j in (i + 1)..d {
            out[k] = std::f64::consts::SQRT_2 * zi * z(j);
            k += 1;
        }
    }
    for (i, &xi) in x.iter().enumerate() {
        out[k + i] = 2.0 * xi;
    }
    for (j, &uj) in u.iter().enumerate() {
        out[k + n + j] = 2.0 * uj;
    }
}

/// `delta = c - L_hat + (psi_next - psi_now)^T theta`.
pub fn td_error(c: f64, l_hat: f64, psi_now: &DVector<f64>, psi_next: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    c - l_hat + psi_next.dot(theta) - psi_now.dot(theta)
}

/// Critic parameter vector `theta = [svec(Upsilon_hat); p_hat; q_hat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub theta: DVector<f64>,
    n: usize,
    m: usize,
}

impl CriticParams {
    pub fn zeros(n: usize, m: usize) -> Self {
        CriticParams {
            theta: DVector::zeros(feature_len(n, m)),
            n,
            m,
        }
    }

    pub fn from_theta(theta: DVector<f64>, n: usize, m: usize) -> Result<Self> {
        if theta.len() != feature_len(n, m) {
            return Err(Error::dim(format!(
                "critic vector has length {}, expected {}",
                theta.len(),
                feature_len(n, m)
            )));
        }
        Ok(CriticParams { theta, n, m })
    }

    pub fn upsilon_hat(&self) -> DMatrix<f64> {
        let d = self.n + self.m;
        smat_slice(&self.theta.as_slice()[..svec_len(d)], d)
    }

    pub fn p_hat(&self) -> DVector<f64> {
        self.theta.rows(svec_len(self.n + self.m), self.n).into_owned()
    }

    pub fn q_hat(&self) -> DVector<f64> {
        self.theta.rows(svec_len(self.n + self.m) + self.n, self.m).into_owned()
    }

    /// `[x;u]^T Upsilon_hat [x;u] + 2 p_hat^T x + 2 q_hat^T u`.
    pub fn quadratic_form(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let z = crate::oracle::stack(x, u);
        z.dot(&(self.upsilon_hat() * &z)) + 2.0 * (self.p_hat().dot(x) + self.q_hat().dot(u))
    }

    /// `H_hat = [Ups22 K - Ups21, Ups22 b + q_hat]`.
    pub fn gradient_parts(&self, policy: &Policy) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let ups = self.upsilon_hat();
        let u22 = ups.view((n, n), (m, m));
        let u21 = ups.view((n, 0), (m, n));
        let e = u22 * &policy.k - u21;
        let g = u22 * &policy.b + self.q_hat();
        let mut h = DMatrix::zeros(m, n + 1);
        h.view_mut((0, 0), (m, n)).copy_from(&e);
        h.set_column(n, &g);
        h
    }
}

/// Running averages maintained on the critic's time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Trackers {
    pub l_hat: f64,
    pub phi_hat: DMatrix<f64>,
    pub jc_hat: f64,
}

impl Trackers {
    pub fn new(n: usize) -> Self {
        Trackers {
            l_hat: 0.0,
            phi_hat: DMatrix::identity(n + 1, n + 1),
            jc_hat: 0.0,
        }
    }
}

/// `alpha_t = a0 / (1 + t/tau)^ea` and likewise for `beta_t`, `gamma_t`.
///
/// `tau = 1` gives the plain `(1 + t)` form; a larger `tau` holds the steps
/// near their initial scale for roughly `tau` iterations before decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub ea: f64,
    pub eb: f64,
    pub ec: f64,
    pub tau: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            a0: 0.012,
            b0: 1.25e-4,
            c0: 1e-7,
            ea: 0.8,
            eb: 0.9,
            ec: 1.0,
            tau: 1e5,
        }
    }
}

impl StepSchedule {
    /// Requires `0.5 < ea < eb < ec <= 1` and positive scales: each sequence
    /// is then non-summable but square-summable, and `beta/alpha`,
    /// `gamma/beta` vanish.
    pub fn validate(&self) -> Result<()> {
        let scales = [self.a0, self.b0, self.c0, self.tau];
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("step-size scales and tau must be positive"));
        }
        if !(0.5 < self.ea && self.ea < self.eb && self.eb < self.ec && self.ec <= 1.0) {
            return Err(Error::invalid(format!(
                "step exponents must satisfy 0.5 < ea < eb < ec <= 1, got ({}, {}, {})",
                self.ea, self.eb, self.ec
            )));
        }
        Ok(())
    }

    fn base(&self, t: u64) -> f64 {
        1.0 + t as f64 / self.tau
    }

    pub fn alpha(&self, t: u64) -> f64 {
        self.a0 / self.base(t).powf(self.ea)
    }

    pub fn beta(&self, t: u64) -> f64 {
        self.b0 / self.base(t).powf(self.eb)
    }

    pub fn gamma(&self, t: u64) -> f64 {
        self.c0 / self.base(t).powf(self.ec)
    }
}

/// Cost-side constants known to the learner.
#[derive(Debug, Clone)]
pub struct CostModel {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    qwq: DMatrix<f64>,
    qm3: DVector<f64>,
    bar_iota: f64,
}

impl CostModel {
    pub fn new(cost: &CostSpec, moments: &NoiseMoments) -> Self {
        let q = cost.q.as_matrix().clone();
        CostModel {
            qwq: &q * moments.w.as_matrix() * &q,
            qm3: &q * &moments.m3,
            r: cost.r.as_matrix().clone(),
            bar_iota: bar_iota(cost, moments),
            q,
        }
    }

    pub fn bar_iota(&self) -> f64 {
        self.bar_iota
    }

    /// Constraint integrand `4 x^T QWQ x + 4 x^T Q M3`, without `bar_iota`.
    pub fn constraint_sample(&self, x: &DVector<f64>) -> f64 {
        4.0 * x.dot(&(&self.qwq * x)) + 4.0 * x.dot(&self.qm3)
    }

    /// `c_mu(x,u) = x^T Q x + u^T R u + mu (o(x) - bar_iota)`, which expands to
    /// `x^T Q_mu x + 2 x^T S + u^T R u - mu bar_iota`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>, mu: f64) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)) + mu * (self.constraint_sample(x) - self.bar_iota)
    }
}

/// Free-standing form of [`CostModel::constraint_sample`].
pub fn constraint_sample(x: &DVector<f64>, cost: &CostSpec, moments: &NoiseMoments) -> f64 {
    CostModel::new(cost, moments).constraint_sample(x)
}

/// Something that advances the state given an action.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
}

/// The simulated plant, owning its own noise stream.
#[derive(Debug, Clone)]
pub struct PlantEnv {
    sys: SystemModel,
    noise: NoiseSpec,
    rng: SimRng,
}

impl PlantEnv {
    pub fn new(sys: SystemModel, noise: NoiseSpec, rng: SimRng) -> Result<Self> {
        if noise.state_dim() != sys.n() {
            return Err(Error::dim("noise dimension does not match the plant"));
        }
        Ok(PlantEnv { sys, noise, rng })
    }
}

impl Environment for PlantEnv {
    fn state_dim(&self) -> usize {
        self.sys.n()
    }

    fn input_dim(&self) -> usize {
        self.sys.m()
    }

    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let w = self.noise.sample(&mut self.rng);
        self.sys.a() * x + self.sys.b() * u + w
    }
}

/// Gain matrix applied to the TD increment `alpha delta psi_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CriticGain {
    /// Plain TD(0).
    #[default]
    Identity,
    /// Inverse of a running average of `psi psi^T`. Any positive definite gain
    /// leaves the TD fixed point unchanged; this one equalizes the feature
    /// scales, which otherwise span several orders of magnitude.
    FeatureCovariance,
}

const GAIN_REFRESH_EVERY: u64 = 50;
const GAIN_RIDGE: f64 = 1e-6;
/// Samples folded into the gain before it is used.
pub const GAIN_BURN_IN: u64 = 2000;

/// Running `E[psi psi^T]` and its periodically refreshed inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    second_moment: DMatrix<f64>,
    inverse: DMatrix<f64>,
    samples: u64,
}

impl Preconditioner {
    pub fn new(dim: usize) -> Self {
        Preconditioner {
            second_moment: DMatrix::zeros(dim, dim),
            inverse: DMatrix::identity(dim, dim),
            samples: 0,
        }
    }

    /// Folds in one feature vector with rate `max(rate, 1/(k+1))`.
    pub fn observe(&mut self, psi: &DVector<f64>, rate: f64) {
        let w = rate.max(1.0 / (self.samples + 1) as f64);
        self.second_moment *= 1.0 - w;
        self.second_moment.ger(w, psi, psi, 1.0);
        self.samples += 1;
        if self.samples % GAIN_REFRESH_EVERY == 1 {
            self.refresh();
        }
    }

    fn refresh(&mut self) {
        let d = self.second_moment.nrows();
        let ridge = GAIN_RIDGE * self.second_moment.trace() / d as f64;
        let mut c = self.second_moment.clone();
        for i in 0..d {
            c[(i, i)] += ridge.max(f64::MIN_POSITIVE);
        }
        if let Some(ch) = c.cholesky() {
            self.inverse = ch.inverse();
        }
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn ready(&self) -> bool {
        self.samples > GAIN_BURN_IN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub schedule: StepSchedule,
    /// Actor and dual updates stay frozen for this many steps.
    pub warmup: u64,
    /// First step of dual updates; values below `warmup` act as `warmup`.
    pub dual_start: u64,
    /// Entrywise bound of the box the actor projects onto.
    pub box_bound: f64,
    /// `||x||` above this aborts the run.
    pub blowup_threshold: f64,
    /// Trust radius on `||X_{t+1} - X_t||_F`.
    pub max_actor_step: f64,
    /// The instability proxy trips when the fast average of `||x||^2` exceeds
    /// this multiple of its recent median.
    pub guard_factor: f64,
    pub record_every: u64,
    /// Freeze actor and dual (policy evaluation only).
    pub freeze_policy: bool,
    pub critic_gain: CriticGain,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            schedule: StepSchedule::default(),
            warmup: 50_000,
            dual_start: 400_000,
            box_bound: 10.0,
            blowup_threshold: 1e8,
            max_actor_step: 2e-4,
            guard_factor: 10.0,
            record_every: 100,
            freeze_policy: false,
            critic_gain: CriticGain::FeatureCovariance,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.box_bound > 0.0) {
            return Err(Error::invalid("box_bound must be positive"));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::invalid("blowup_threshold must be positive"));
        }
        if !(self.max_actor_step > 0.0) || !(self.guard_factor > 1.0) {
            return Err(Error::invalid("max_actor_step must be > 0 and guard_factor > 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// Retries allowed when shrinking an actor step.
pub const ACTOR_RETRIES: u32 = 10;
const GUARD_EMA_RATE: f64 = 0.01;
const GUARD_SNAPSHOT_EVERY: u64 = 100;
const GUARD_WINDOW: usize = 64;

/// Model-free instability proxy: a fast average of `||x||^2` compared with the
/// median of its recent snapshots.
#[derive(Debug, Clone, PartialEq)]
struct InstabilityGuard {
    ema: f64,
    window: Vec<f64>,
    next: usize,
}

impl InstabilityGuard {
    fn new() -> Self {
        InstabilityGuard {
            ema: f64::NAN,
            window: Vec::with_capacity(GUARD_WINDOW),
            next: 0,
        }
    }

    fn observe(&mut self, t: u64, x_norm_sq: f64) {
        self.ema = if self.ema.is_nan() {
            x_norm_sq
        } else {
            self.ema + GUARD_EMA_RATE * (x_norm_sq - self.ema)
        };
        if t.is_multiple_of(GUARD_SNAPSHOT_EVERY) {
            if self.window.len() < GUARD_WINDOW {
                self.window.push(self.ema);
            } else {
                self.window[self.next] = self.ema;
                self.next = (self.next + 1) % GUARD_WINDOW;
            }
        }
    }

    fn tripped(&self, factor: f64) -> bool {
        if self.window.len() < 8 {
            return false;
        }
        let mut sorted = self.window.clone();
        sorted.sort_by(f64::total_cmp);
        self.ema > factor * sorted[sorted.len() / 2]
    }
}

/// Complete iterate of the algorithm.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub t: u64,
    pub policy: Policy,
    pub mu: f64,
    pub critic: CriticParams,
    pub trackers: Trackers,
    pub x: DVector<f64>,
    /// Action already drawn for the current state.
    pub u: DVector<f64>,
    rng: SimRng,
    guard: InstabilityGuard,
    gain: Option<Preconditioner>,
    pub actor_retries: u64,
    pub actor_clips: u64,
}

impl LearnerState {
    /// Zero critic, `L_hat = 0`, `Phi_hat = I`, `J_c_hat = 0`.
    pub fn new(policy: Policy, mu: f64, x0: DVector<f64>, seed: u64) -> Result<Self> {
        let (n, m) = (policy.n(), policy.m());
        if x0.len() != n {
            return Err(Error::dim("initial state does not match the policy"));
        }
        if !(mu >= 0.0) {
            return Err(Error::invalid("initial multiplier must be >= 0"));
        }
        let mut rng = stream_rng(seed, 1);
        let u = draw_action(&policy, &x0, &mut rng);
        Ok(LearnerState {
            t: 0,
            critic: CriticParams::zeros(n, m),
            trackers: Trackers::new(n),
            mu,
            x: x0,
            u,
            rng,
            guard: InstabilityGuard::new(),
            gain: None,
            actor_retries: 0,
            actor_clips: 0,
            policy,
        })
    }
}

fn draw_action(policy: &Policy, x: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
    let mut u = policy.mean_action(x);
    if policy.sigma > 0.0 {
        for ui in u.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *ui += policy.sigma * z;
        }
    }
    u
}

/// Tracker and critic updates for one transition.
///
/// `psi_now`, `c` and `o` belong to `(x_t, u_t)`; `z = [x_t; -1]`.
#[allow(clippy::too_many_arguments)]
pub fn critic_step(
    critic: &mut CriticParams,
    trackers: &mut Trackers,
    c: f64,
    o: f64,
    x: &DVector<f64>,
    psi_now: &DVector<f64>,
    psi_next: &DVector<f64>,
    alpha: f64,
    gain: Option<Option<&DMatrix<f64>>>,
) -> Result<f64> {
    let delta = td_error(c, trackers.l_hat, psi_now, psi_next, &critic.theta);
    if !delta.is_finite() {
        return Err(Error::NonFinite("TD error".into()));
    }
    trackers.l_hat += alpha * (c - trackers.l_hat);
    let n = x.len();
    let phi = &mut trackers.phi_hat;
    for j in 0..=n {
        let zj = if j < n { x[j] } else { -1.0 };
        for i in 0..=n {
            let zi = if i < n { x[i] } else { -1.0 };
            phi[(i, j)] += alpha * (zi * zj - phi[(i, j)]);
        }
    }
    trackers.jc_hat += alpha * (o - trackers.jc_hat);
    match gain {
        Some(Some(m)) => critic.theta.gemv(alpha * delta, m, psi_now, 1.0),
        Some(None) => {}
        None => critic.theta.axpy(alpha * delta, psi_now, 1.0),
    }
    Ok(delta)
}

/// Outcome of an actor update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorOutcome {
    Applied {
        retries: u32,
    },
    /// Still too long after the last retry; rescaled onto the trust radius.
    Clipped,
}

/// Projected step `X <- Proj_box(X - beta H_hat Phi_hat)`.
///
/// `beta` is halved (up to [`ACTOR_RETRIES`] times) while the proposed move
/// exceeds the trust radius or the instability proxy is tripped; a move that
/// is still too long after the last retry is shortened to the radius.
pub fn actor_step(
    policy: &Policy,
    critic: &CriticParams,
    phi_hat: &DMatrix<f64>,
    beta: f64,
    cfg: &LearnerConfig,
    unstable: bool,
) -> Result<(Policy, ActorOutcome)> {
    let h = critic.gradient_parts(policy);
    let dir = h * phi_hat;
    if dir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("actor direction".into()));
    }
    let dir_norm = dir.norm();
    let mut step = beta;
    let mut retries = 0;
    while (unstable || step * dir_norm > cfg.max_actor_step) && retries < ACTOR_RETRIES {
        step *= 0.5;
        retries += 1;
    }
    let mut outcome = ActorOutcome::Applied { retries };
    if step * dir_norm > cfg.max_actor_step {
        step = cfg.max_actor_step / dir_norm;
        outcome = ActorOutcome::Clipped;
    }
    let x = project_box(&(policy.x_matrix() - dir * step), -cfg.box_bound, cfg.box_bound)?;
    Ok((Policy::from_x_matrix(&x, policy.sigma)?, outcome))
}

/// `mu <- max(0, mu + gamma (J_c_hat - bar_iota))`.
pub fn dual_step(mu: f64, jc_hat: f64, bar_iota: f64, gamma: f64) -> f64 {
    (mu + gamma * (jc_hat - bar_iota)).max(0.0)
}

/// One recorded point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Number of completed steps.
    pub t: u64,
    pub l_hat: f64,
    pub jc_hat: f64,
    pub mu: f64,
    /// `X_t = [K_t, b_t]`.
    pub x_matrix: DMatrix<f64>,
    pub x_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    Blowup { step: u64, norm: f64 },
    NonFinite { step: u64, what: String },
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub state: LearnerState,
    pub trace: Vec<TraceRow>,
    pub outcome: Outcome,
}

/// Runs `steps` iterations from `state`.
///
/// Step order: act (the action for `x_t` was drawn on the previous step),
/// observe `x_{t+1}` and `c_{mu,t}`, draw `u_{t+1}` from the current policy,
/// update the trackers, TD critic, actor and multiplier.
pub fn train<E: Environment>(
    mut state: LearnerState,
    env: &mut E,
    costs: &CostModel,
    cfg: &LearnerConfig,
    steps: u64,
) -> Result<TrainingResult> {
    cfg.validate()?;
    let (n, m) = (env.state_dim(), env.input_dim());
    if state.policy.n() != n || state.policy.m() != m {
        return Err(Error::dim("policy does not match the environment"));
    }
    if cfg.critic_gain == CriticGain::FeatureCovariance && state.gain.is_none() {
        state.gain = Some(Preconditioner::new(feature_len(n, m)));
    }
    let mut trace = Vec::with_capacity((steps / cfg.record_every) as usize);
    let mut psi_now = DVector::zeros(feature_len(n, m));
    let mut psi_next = DVector::zeros(feature_len(n, m));
    feature_into(state.x.as_slice(), state.u.as_slice(), psi_now.as_mut_slice());

    for _ in 0..steps {
        let t = state.t;
        let x_next = env.step(&state.x, &state.u);
        let norm = x_next.norm();
        if !(norm <= cfg.blowup_threshold) {
            return Ok(TrainingResult {
                state,
                trace,
                outcome: Outcome::Blowup { step: t, norm },
            });
        }
        let c = costs.stage_cost(&state.x, &state.u, state.mu);
        let o = costs.constraint_sample(&state.x);
        let u_next = draw_action(&state.policy, &x_next, &mut state.rng);
        feature_into(x_next.as_slice(), u_next.as_slice(), psi_next.as_mut_slice());

        let alpha = cfg.schedule.alpha(t);
        if let Some(pc) = state.gain.as_mut() {
            pc.observe(&psi_now, alpha);
        }
        if let Err(e) = critic_step(
            &mut state.critic,
            &mut state.trackers,
            c,
            o,
            &state.x,
            &psi_now,
            &psi_next,
            alpha,
            state.gain.as_ref().map(|g| g.ready().then(|| g.inverse())),
        ) {
            return Ok(TrainingResult {
                state,
                trace,
                outcome: Outcome::NonFinite {
                    step: t,
                    what: e.to_string(),
                },
            });
        }
        state.guard.observe(t, norm * norm);

        if !cfg.freeze_policy && t >= cfg.warmup {
            let unstable = state.guard.tripped(cfg.guard_factor);
            match actor_step(
                &state.policy,
                &state.critic,
                &state.trackers.phi_hat,
                cfg.schedule.beta(t),
                cfg,
                unstable,
            ) {
                Ok((p, outcome)) => {
                    match outcome {
                        ActorOutcome::Applied { retries } => state.actor_retries += u64::from(retries),
                        ActorOutcome::Clipped => state.actor_clips += 1,
                    }
                    state.policy = p;
                }
                Err(e) => {
                    return Ok(TrainingResult {
                        state,
                        trace,
                        outcome: Outcome::NonFinite {
                            step: t,
                            what: e.to_string(),
                        },
                    })
                }
            }
            if t >= cfg.dual_start {
                state.mu = dual_step(state.mu, state.trackers.jc_hat, costs.bar_iota(), cfg.schedule.gamma(t));
            }
        }

        state.x = x_next;
        state.u = u_next;
        std::mem::swap(&mut psi_now, &mut psi_next);
        state.t += 1;
        if state.t.is_multiple_of(cfg.record_every) {
            trace.push(TraceRow {
                t: state.t,
                l_hat: state.trackers.l_hat,
                jc_hat: state.trackers.jc_hat,
                mu: state.mu,
                x_matrix: state.policy.x_matrix(),
                x_norm: norm,
            });
        }
    }
    Ok(TrainingResult {
        state,
        trace,
        outcome: Outcome::Completed,
    })
}

/// Inputs shared by independent training runs that differ only in the seed.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub sys: SystemModel,
    pub noise: NoiseSpec,
    pub costs: CostModel,
    pub policy0: Policy,
    pub mu0: f64,
    pub x0: DVector<f64>,
    pub cfg: LearnerConfig,
    pub steps: u64,
}

/// One run: the plant draws from stream 0 of `seed`, the policy from stream 1.
pub fn run_seed(setup: &RunSetup, seed: u64) -> Result<TrainingResult> {
    let mut env = PlantEnv::new(setup.sys.clone(), setup.noise.clone(), stream_rng(seed, 0))?;
    let state = LearnerState::new(setup.policy0.clone(), setup.mu0, setup.x0.clone(), seed)?;
    train(state, &mut env, &setup.costs, &setup.cfg, setup.steps)
}

/// Independent runs for each seed; results come back in seed order and match
/// [`run_seed`] exactly.
pub fn run_seeds(setup: &RunSetup, seeds: &[u64], exec: Exec) -> Vec<Result<TrainingResult>> {
    exec.map_slice(seeds, |&seed| run_seed(setup, seed))
}
