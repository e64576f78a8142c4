//! Stochastic LTI plant `x' = A x + B u + w`, its noise model and the
//! stationary moments of the closed loop under an affine Gaussian policy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{chunk_ranges, Exec};
use crate::matkit::{solve_discrete_lyapunov, spectral_radius, SymMatrix};

/// Random stream used everywhere a seed is accepted.
pub type SimRng = ChaCha8Rng;

/// Fewer Monte Carlo samples than this make the fourth-moment estimate (and
/// hence the constraint level) too noisy to be useful.
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Samples per Monte Carlo chunk; each chunk owns an independent stream.
pub const MC_CHUNK: usize = 1 << 15;
/// Eigenvalue floor used when reporting whether `W` is positive definite.
pub const COVARIANCE_FLOOR: f64 = 1e-9;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NonSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::dim(format!(
                "A is {}x{} but B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(SystemModel { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * k
    }

    pub fn closed_loop_radius(&self, k: &DMatrix<f64>) -> Result<f64> {
        spectral_radius(&self.closed_loop(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Scalar noise channel. The second parameter of every Gaussian is a variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Channel {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Sum of independent channels.
    Sum {
        terms: Vec<Channel>,
    },
}

impl Channel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Channel::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(*variance > 0.0) || !variance.is_finite() {
                    return Err(Error::invalid(format!(
                        "gaussian channel needs finite mean and positive variance, got ({mean}, {variance})"
                    )));
                }
            }
            Channel::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::invalid("mixture has no components"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
                }
                for c in components {
                    if !(c.weight > 0.0) {
                        return Err(Error::invalid("mixture weights must be positive"));
                    }
                    Channel::Gaussian {
                        mean: c.mean,
                        variance: c.variance,
                    }
                    .validate()?;
                }
            }
            Channel::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::invalid(format!(
                        "uniform channel needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            Channel::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::invalid("sum channel has no terms"));
                }
                terms.iter().try_for_each(Channel::validate)?;
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Channel::Gaussian { mean, .. } => *mean,
            Channel::Mixture { components } => components.iter().map(|c| c.weight * c.mean).sum(),
            Channel::Uniform { lo, hi } => 0.5 * (lo + hi),
            Channel::Sum { terms } => terms.iter().map(Channel::mean).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Channel::Gaussian { variance, .. } => *variance,
            Channel::Mixture { components } => {
                let second: f64 = components
                    .iter()
                    .map(|c| c.weight * (c.variance + c.mean * c.mean))
                    .sum();
                let mean = self.mean();
                second - mean * mean
            }
            Channel::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Channel::Sum { terms } => terms.iter().map(Channel::variance).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Channel::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            Channel::Mixture { components } => {
                let pick: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components[components.len() - 1];
                for c in components {
                    acc += c.weight;
                    if pick < acc {
                        chosen = *c;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                chosen.mean + chosen.variance.sqrt() * z
            }
            Channel::Uniform { lo, hi } => {
                let v: f64 = rng.random();
                lo + (hi - lo) * v
            }
            Channel::Sum { terms } => terms.iter().map(|t| t.sample(rng)).sum(),
        }
    }
}

/// `w = M v` where `v` stacks independent scalar channels and `M` defaults to
/// the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    channels: Vec<Channel>,
    mapping: Option<DMatrix<f64>>,
}

impl NoiseSpec {
    pub fn new(channels: Vec<Channel>, mapping: Option<DMatrix<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("noise spec has no channels"));
        }
        channels.iter().try_for_each(Channel::validate)?;
        if let Some(map) = &mapping {
            if map.ncols() != channels.len() {
                return Err(Error::dim(format!(
                    "noise mapping has {} columns for {} channels",
                    map.ncols(),
                    channels.len()
                )));
            }
        }
        Ok(NoiseSpec { channels, mapping })
    }

    /// No noise at all (a single zero-variance path is not representable as a
    /// channel, so this is a mapping of zeros).
    pub fn zero(n: usize) -> Self {
        NoiseSpec {
            channels: vec![Channel::Gaussian {
                mean: 0.0,
                variance: 1.0,
            }],
            mapping: Some(DMatrix::zeros(n, 1)),
        }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn mapping(&self) -> Option<&DMatrix<f64>> {
        self.mapping.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.mapping.as_ref().map_or(self.channels.len(), |m| m.nrows())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let v = DVector::from_iterator(self.channels.len(), self.channels.iter().map(|c| c.sample(rng)));
        match &self.mapping {
            Some(m) => m * v,
            None => v,
        }
    }

    /// Exact mean of `w`.
    pub fn mean(&self) -> DVector<f64> {
        let v = DVector::from_iterator(self.channels.len(), self.channels.iter().map(Channel::mean));
        match &self.mapping {
            Some(m) => m * v,
            None => v,
        }
    }

    /// Exact covariance of `w`.
    pub fn covariance(&self) -> SymMatrix {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(Channel::variance),
        ));
        match &self.mapping {
            Some(m) => SymMatrix::symmetrize(&(m * d * m.transpose())),
            None => SymMatrix::symmetrize(&d),
        }
    }
}

/// One draw of `w`.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> DVector<f64> {
    spec.sample(rng)
}

/// Noise statistics entering the cost and constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMoments {
    pub wbar: DVector<f64>,
    pub w: SymMatrix,
    /// `E[(w - wbar)(w - wbar)^T Q (w - wbar)]`.
    pub m3: DVector<f64>,
    /// `E[((w - wbar)^T Q (w - wbar) - tr(WQ))^2]`.
    pub m4: f64,
    /// Monte Carlo standard errors (zero when the moments were given exactly).
    pub m3_se: DVector<f64>,
    pub m4_se: f64,
}

impl NoiseMoments {
    /// Moments supplied exactly, e.g. from a closed form.
    pub fn exact(wbar: DVector<f64>, w: SymMatrix, m3: DVector<f64>, m4: f64) -> Result<Self> {
        let n = wbar.len();
        if w.dim() != n || m3.len() != n {
            return Err(Error::dim("noise moments have inconsistent dimensions"));
        }
        if m4 < 0.0 {
            return Err(Error::invalid("m4 must be nonnegative"));
        }
        Ok(NoiseMoments {
            wbar,
            w,
            m3,
            m4,
            m3_se: DVector::zeros(n),
            m4_se: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.wbar.len()
    }

    /// Whether `W` clears the positive-definiteness floor.
    pub fn covariance_is_definite(&self) -> bool {
        self.w.min_eigenvalue() >= COVARIANCE_FLOOR
    }
}

#[derive(Clone, Copy, Default)]
struct MomentSums {
    count: usize,
    m4: f64,
    m4_sq: f64,
}

/// Mean and covariance in closed form; `M3` and `m4` by seeded Monte Carlo
/// with standard errors.
pub fn compute_moments(spec: &NoiseSpec, q: &SymMatrix, mc_samples: usize, seed: u64) -> Result<NoiseMoments> {
    compute_moments_with(spec, q, mc_samples, seed, Exec::default())
}

pub fn compute_moments_with(
    spec: &NoiseSpec,
    q: &SymMatrix,
    mc_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<NoiseMoments> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::invalid(format!(
            "mc_samples = {mc_samples} is below the minimum of {MIN_MC_SAMPLES}"
        )));
    }
    let n = spec.state_dim();
    if q.dim() != n {
        return Err(Error::dim(format!(
            "Q is {0}x{0} but noise is {n}-dimensional",
            q.dim()
        )));
    }
    let wbar = spec.mean();
    let w = spec.covariance();
    let tr_wq = (w.as_matrix() * q.as_matrix()).trace();

    let chunks = chunk_ranges(mc_samples, MC_CHUNK);
    let partials = exec.map_slice(&chunks, |&(start, len)| {
        let mut rng = stream_rng(seed, (start / MC_CHUNK) as u64);
        let mut sums = MomentSums::default();
        let mut m3 = DVector::<f64>::zeros(n);
        let mut m3_sq = DVector::<f64>::zeros(n);
        for _ in 0..len {
            let v = spec.sample(&mut rng) - &wbar;
            let quad = v.dot(&(q.as_matrix() * &v));
            for i in 0..n {
                let y = v[i] * quad;
                m3[i] += y;
                m3_sq[i] += y * y;
            }
            let d = quad - tr_wq;
            sums.m4 += d * d;
            sums.m4_sq += d * d * d * d;
        }
        sums.count = len;
        (sums, m3, m3_sq)
    });

    let mut total = MomentSums::default();
    let mut m3 = DVector::<f64>::zeros(n);
    let mut m3_sq = DVector::<f64>::zeros(n);
    for (s, a, b) in partials {
        total.count += s.count;
        total.m4 += s.m4;
        total.m4_sq += s.m4_sq;
        m3 += a;
        m3_sq += b;
    }
    let count = total.count as f64;
    let m3 = m3 / count;
    let m3_se = DVector::from_iterator(
        n,
        (0..n).map(|i| ((m3_sq[i] / count - m3[i] * m3[i]).max(0.0) / count).sqrt()),
    );
    let m4 = total.m4 / count;
    let m4_se = ((total.m4_sq / count - m4 * m4).max(0.0) / count).sqrt();
    let moments = NoiseMoments {
        wbar,
        w,
        m3,
        m4,
        m3_se,
        m4_se,
    };
    if !moments.covariance_is_definite() {
        log::warn!(
            "noise covariance is singular (min eigenvalue {:.3e}); some state directions carry no noise",
            moments.w.min_eigenvalue()
        );
    }
    Ok(moments)
}

/// Affine Gaussian policy `u = -K x + b + sigma * eta`, `eta ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub k: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: f64,
}

impl Policy {
    pub fn new(k: DMatrix<f64>, b: DVector<f64>, sigma: f64) -> Result<Self> {
        if k.nrows() != b.len() {
            return Err(Error::dim(format!(
                "K has {} rows but b has length {}",
                k.nrows(),
                b.len()
            )));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("exploration sigma must be >= 0, got {sigma}")));
        }
        Ok(Policy { k, b, sigma })
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    pub fn n(&self) -> usize {
        self.k.ncols()
    }

    /// The decision variable `X = [K, b]`, `m x (n+1)`.
    pub fn x_matrix(&self) -> DMatrix<f64> {
        let (m, n) = self.k.shape();
        let mut x = DMatrix::zeros(m, n + 1);
        x.view_mut((0, 0), (m, n)).copy_from(&self.k);
        x.set_column(n, &self.b);
        x
    }

    /// Rebuilds a policy from `X = [K, b]`, keeping `sigma`.
    pub fn from_x_matrix(x: &DMatrix<f64>, sigma: f64) -> Result<Self> {
        if x.ncols() < 2 {
            return Err(Error::dim("X must have at least two columns"));
        }
        let n = x.ncols() - 1;
        Policy::new(x.columns(0, n).into_owned(), x.column(n).into_owned(), sigma)
    }

    /// Mean action `-K x + b`.
    pub fn mean_action(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.k * x
    }

    pub fn check_dims(&self, sys: &SystemModel) -> Result<()> {
        if self.k.shape() != (sys.m(), sys.n()) {
            return Err(Error::dim(format!(
                "K is {}x{}, expected {}x{}",
                self.k.nrows(),
                self.k.ncols(),
                sys.m(),
                sys.n()
            )));
        }
        Ok(())
    }

    /// `rho(A - BK) < 1 - margin`.
    pub fn is_stabilizing(&self, sys: &SystemModel, margin: f64) -> Result<bool> {
        Ok(sys.closed_loop_radius(&self.k)? < 1.0 - margin)
    }
}

/// One transition: draws the action and the next state.
pub fn step<R: Rng + ?Sized>(
    sys: &SystemModel,
    noise: &NoiseSpec,
    x: &DVector<f64>,
    policy: &Policy,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let mut u = policy.mean_action(x);
    if policy.sigma > 0.0 {
        for ui in u.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *ui += policy.sigma * z;
        }
    }
    let w = noise.sample(rng);
    let next = sys.a() * x + sys.b() * &u + w;
    (u, next)
}

/// Stationary mean and covariance of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMoments {
    pub xbar: DVector<f64>,
    pub sigma: SymMatrix,
    /// Covariance of `zeta = w + sigma B eta`.
    pub psi_zeta: SymMatrix,
    pub zetabar: DVector<f64>,
}

pub fn closed_loop_moments(sys: &SystemModel, moments: &NoiseMoments, policy: &Policy) -> Result<ClosedLoopMoments> {
    policy.check_dims(sys)?;
    if moments.n() != sys.n() {
        return Err(Error::dim("noise moments do not match the state dimension"));
    }
    let f = sys.closed_loop(&policy.k);
    let rho = spectral_radius(&f)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let n = sys.n();
    let psi =
        SymMatrix::symmetrize(&(moments.w.as_matrix() + sys.b() * sys.b().transpose() * (policy.sigma * policy.sigma)));
    let sigma = solve_discrete_lyapunov(&f.transpose(), &psi)?;
    let rhs = sys.b() * &policy.b + &moments.wbar;
    let xbar = (DMatrix::<f64>::identity(n, n) - &f)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoConvergence("I - (A - BK) is singular".into()))?;
    Ok(ClosedLoopMoments {
        xbar,
        sigma,
        psi_zeta: psi,
        zetabar: moments.wbar.clone(),
    })
}

/// Layout of a batch of independent closed-loop chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErgodicBatch {
    pub chains: usize,
    /// Recorded steps per chain, after `burn_in`.
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Time averages pooled over a batch of chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicStats<const K: usize> {
    pub xbar: DVector<f64>,
    pub covariance: SymMatrix,
    /// Averages of the user observables.
    pub observed: [f64; K],
    /// Standard errors of `observed` from the spread of per-chain averages
    /// (zero with a single chain).
    pub observed_se: [f64; K],
    pub samples: usize,
}

struct ChainSums<const K: usize> {
    sum_x: DVector<f64>,
    sum_xx: DMatrix<f64>,
    observed: [f64; K],
}

/// Simulates `batch.chains` independent chains from `x = 0` under `policy`
/// (chain `i` uses stream `i` of `batch.seed`) and pools their time averages.
/// `observe(x, u)` is averaged over the recorded steps.
pub fn ergodic_stats<const K: usize, F>(
    sys: &SystemModel,
    noise: &NoiseSpec,
    policy: &Policy,
    batch: ErgodicBatch,
    observe: F,
    exec: Exec,
) -> Result<ErgodicStats<K>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> [f64; K] + Sync + Send,
{
    policy.check_dims(sys)?;
    if noise.state_dim() != sys.n() {
        return Err(Error::dim("noise dimension does not match the plant"));
    }
    if batch.chains == 0 || batch.steps == 0 {
        return Err(Error::invalid("ergodic batch needs at least one chain and one step"));
    }
    let rho = sys.closed_loop_radius(&policy.k)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let n = sys.n();
    let per_chain = exec.map_indexed(batch.chains, |i| {
        let mut rng = stream_rng(batch.seed, i as u64);
        let mut x = DVector::<f64>::zeros(n);
        let mut sums = ChainSums {
            sum_x: DVector::zeros(n),
            sum_xx: DMatrix::zeros(n, n),
            observed: [0.0; K],
        };
        for t in 0..batch.burn_in + batch.steps {
            let (u, next) = step(sys, noise, &x, policy, &mut rng);
            if t >= batch.burn_in {
                sums.sum_x += &x;
                sums.sum_xx.ger(1.0, &x, &x, 1.0);
                for (acc, v) in sums.observed.iter_mut().zip(observe(&x, &u)) {
                    *acc += v;
                }
            }
            x = next;
        }
        sums
    });

    let samples = batch.chains * batch.steps;
    let total = samples as f64;
    let mut sum_x = DVector::<f64>::zeros(n);
    let mut sum_xx = DMatrix::<f64>::zeros(n, n);
    let mut observed = [0.0; K];
    for c in &per_chain {
        sum_x += &c.sum_x;
        sum_xx += &c.sum_xx;
        for (acc, v) in observed.iter_mut().zip(c.observed) {
            *acc += v;
        }
    }
    let xbar = sum_x / total;
    let covariance = SymMatrix::symmetrize(&(sum_xx / total - &xbar * xbar.transpose()));
    observed.iter_mut().for_each(|v| *v /= total);
    let mut observed_se = [0.0; K];
    if batch.chains > 1 {
        let chains = batch.chains as f64;
        for k in 0..K {
            let var = per_chain
                .iter()
                .map(|c| (c.observed[k] / batch.steps as f64 - observed[k]).powi(2))
                .sum::<f64>()
                / (chains - 1.0);
            observed_se[k] = (var / chains).sqrt();
        }
    }
    Ok(ErgodicStats {
        xbar,
        covariance,
        observed,
        observed_se,
        samples,
    })
}
