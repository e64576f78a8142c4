#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rclqr_core::matkit::SymMatrix;
use rclqr_core::oracle::{CostSpec, Problem};
use rclqr_core::plant::{
    compute_moments, Channel, MixtureComponent, NoiseMoments, NoiseSpec, Policy, SimRng, SystemModel,
};

pub fn twin_system() -> SystemModel {
    let a = DMatrix::from_row_slice(4, 4, &[1., 1., 0., 0., 0., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 1.]);
    SystemModel::new(a, twin_input()).unwrap()
}

fn twin_input() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[1., 0., 1., 0., 0., 1., 0., 1.])
}

/// Two input channels mapped into the state through `B`.
pub fn twin_noise() -> NoiseSpec {
    let first = Channel::Sum {
        terms: vec![
            Channel::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.3,
                        mean: 5.0,
                        variance: 8.0,
                    },
                    MixtureComponent {
                        weight: 0.7,
                        mean: 8.0,
                        variance: 10.0,
                    },
                ],
            },
            Channel::Uniform { lo: 0.0, hi: 0.5 },
        ],
    };
    let second = Channel::Sum {
        terms: vec![
            Channel::Gaussian {
                mean: 0.0,
                variance: 4.0,
            },
            Channel::Uniform { lo: 0.0, hi: 0.5 },
        ],
    };
    NoiseSpec::new(vec![first, second], Some(twin_input())).unwrap()
}

pub fn twin_q() -> SymMatrix {
    SymMatrix::from_diagonal(&[0.5, 0.1, 0.1, 0.5])
}

pub fn twin_problem(iota: f64) -> Problem {
    let q = twin_q();
    let moments = compute_moments(&twin_noise(), &q, 1_000_000, 7).unwrap();
    let cost = CostSpec::new(q, SymMatrix::from_diagonal(&[0.2, 0.2]), iota).unwrap();
    Problem::new(twin_system(), cost, moments).unwrap()
}

pub fn twin_k0() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[0.5, 1.0, 0., 0., 0., 0., 0.5, 1.0])
}

/// Scalar plant `x' = 0.5 x + u + w` with skewed noise given exactly.
pub fn scalar_problem(iota: f64) -> Problem {
    let sys = SystemModel::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let cost = CostSpec::new(SymMatrix::identity(1), SymMatrix::identity(1), iota).unwrap();
    let moments = NoiseMoments::exact(
        DVector::from_element(1, 0.3),
        SymMatrix::identity(1),
        DVector::from_element(1, 0.4),
        2.5,
    )
    .unwrap();
    Problem::new(sys, cost, moments).unwrap()
}

/// Two states, one input, open-loop stable.
pub fn small_system() -> SystemModel {
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    SystemModel::new(a, b).unwrap()
}

pub fn small_noise() -> NoiseSpec {
    NoiseSpec::new(
        vec![
            Channel::Gaussian {
                mean: 0.2,
                variance: 0.25,
            },
            Channel::Uniform { lo: -0.5, hi: 0.5 },
        ],
        None,
    )
    .unwrap()
}

pub fn small_problem() -> Problem {
    let q = SymMatrix::from_diagonal(&[1.0, 0.5]);
    let moments = compute_moments(&small_noise(), &q, 1_000_000, 3).unwrap();
    let cost = CostSpec::new(q, SymMatrix::identity(1), 5.0).unwrap();
    Problem::new(small_system(), cost, moments).unwrap()
}

pub fn small_policy() -> Policy {
    Policy::new(
        DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
        DVector::from_element(1, 0.3),
        1.0,
    )
    .unwrap()
}

/// A random policy around `k_center` with `rho(A - BK) <= 0.95`.
pub fn random_stable_policy(
    problem: &Problem,
    k_center: &DMatrix<f64>,
    spread: f64,
    b_range: f64,
    sigma: f64,
    rng: &mut SimRng,
) -> Policy {
    let (n, m) = (problem.sys.n(), problem.sys.m());
    loop {
        let k = DMatrix::from_fn(m, n, |i, j| k_center[(i, j)] + rng.random_range(-spread..spread));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-b_range..b_range));
        let policy = Policy::new(k, b, sigma).unwrap();
        if problem.sys.closed_loop_radius(&policy.k).unwrap() <= 0.95 {
            return policy;
        }
    }
}

pub fn random_vector(n: usize, scale: f64, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}
