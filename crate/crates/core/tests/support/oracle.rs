//! Random small SDP instances and an independent dual oracle for them.
//!
//! Every instance carries the trace cap `Tr{V} <= d0` as its first upper
//! constraint. Its multiplier can then be eliminated in closed form and the
//! dual becomes
//!
//! ```text
//! f(mu, y) = d0 max(0, lambda_max(C + mu A - y B)) - mu b + y d
//! ```
//!
//! over at most two non-negative scalars, minimized here by nested
//! golden-section search. Instances are built around a strictly feasible
//! `V0`, so strong duality holds and `min f` is the optimal value.

#![allow(dead_code)]

use isapt::linalg::{hermitian_eigen, outer, trace_product};
use isapt::sdp::HermitianLinearSdp;
use isapt::{CMatrix, CVector, Complex};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| Complex::new(2.0 * uniform(rng) - 1.0, 2.0 * uniform(rng) - 1.0))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let m = CMatrix::from_fn(n, n, |_, _| Complex::new(2.0 * uniform(rng) - 1.0, 2.0 * uniform(rng) - 1.0));
    (&m + m.adjoint()) * Complex::new(0.5, 0.0)
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
    (0..rank).fold(CMatrix::zeros(n, n), |acc, _| acc + outer(&random_vector(rng, n)))
}

pub fn lambda_max(m: &CMatrix) -> f64 {
    hermitian_eigen(m).values[0]
}

/// Minimizes a convex function on `[0, inf)`: brackets by doubling, then
/// golden-section search.
pub fn minimize_halfline(f: &dyn Fn(f64) -> f64) -> f64 {
    let mut hi = 1.0;
    while f(2.0 * hi) < f(hi) && hi < 1e12 {
        hi *= 2.0;
    }
    let (mut a, mut b) = (0.0, 2.0 * hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    f(0.0).min(f((a + b) / 2.0))
}

pub struct Instance {
    pub problem: HermitianLinearSdp,
    /// Strictly feasible point the bounds were built around.
    pub v0: CMatrix,
}

/// `n` in 1..=3, an optional lower constraint and up to two upper ones
/// (the first being the trace cap).
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = 1 + (rng.next_u64() % 3) as usize;
    let v0 = random_psd(rng, n, n) + CMatrix::identity(n, n) * Complex::new(0.1, 0.0);
    let slack = |rng: &mut ChaCha8Rng| 1.2 + uniform(rng);
    let mut problem = HermitianLinearSdp::new(random_hermitian(rng, n));
    let d0 = trace_product(&CMatrix::identity(n, n), &v0) * slack(rng);
    if !rng.next_u64().is_multiple_of(4) {
        let rank = 1 + (rng.next_u64() % n as u64) as usize;
        let a = random_psd(rng, n, rank);
        let b = trace_product(&a, &v0) / slack(rng);
        problem = problem.with_lower(a, b);
    }
    problem = problem.with_upper(CMatrix::identity(n, n), d0);
    if rng.next_u64().is_multiple_of(2) {
        let b = random_psd(rng, n, 1);
        let d = trace_product(&b, &v0) * slack(rng);
        problem = problem.with_upper(b, d);
    }
    Instance { problem, v0 }
}

/// `min f` over the remaining multipliers.
pub fn dual_oracle(p: &HermitianLinearSdp) -> f64 {
    let d0 = p.upper[0].bound;
    let lower = p.lower.first();
    let extra = p.upper.get(1);
    let f = |mu: f64, y: f64| -> f64 {
        let mut z = p.objective.clone();
        let mut value = 0.0;
        if let Some(c) = lower {
            z += &c.matrix * Complex::new(mu, 0.0);
            value -= mu * c.bound;
        }
        if let Some(c) = extra {
            z -= &c.matrix * Complex::new(y, 0.0);
            value += y * c.bound;
        }
        value + d0 * lambda_max(&z).max(0.0)
    };
    let inner = |mu: f64| -> f64 {
        if extra.is_some() {
            minimize_halfline(&|y| f(mu, y))
        } else {
            f(mu, 0.0)
        }
    };
    if lower.is_some() {
        minimize_halfline(&inner)
    } else {
        inner(0.0)
    }
}

pub fn primal_value(p: &HermitianLinearSdp, v: &CMatrix) -> f64 {
    trace_product(&p.objective, v)
}

/// Largest relative violation of a trace constraint by `v`.
pub fn violation(p: &HermitianLinearSdp, v: &CMatrix) -> f64 {
    let lower = p.lower.iter().map(|c| (c.bound - trace_product(&c.matrix, v)) / c.bound.abs().max(1.0));
    let upper = p.upper.iter().map(|c| (trace_product(&c.matrix, v) - c.bound) / c.bound.abs().max(1.0));
    lower.chain(upper).fold(0.0, f64::max)
}


/// An echo floor `Tr{u u^H V} >= eps1` above the `eps2 |u|^2` the trace cap
/// allows, on a random `n` in 2..=5.
pub fn unreachable_echo_instance(rng: &mut ChaCha8Rng) -> HermitianLinearSdp {
    let n = 2 + (rng.next_u64() % 4) as usize;
    let u = random_vector(rng, n);
    let eps2 = 0.1 + uniform(rng);
    let eps1 = eps2 * u.norm_squared() * (1.0 + 0.01 + uniform(rng));
    let h = random_vector(rng, n);
    HermitianLinearSdp::new(outer(&h))
        .with_lower(outer(&u), eps1)
        .with_upper(CMatrix::identity(n, n), eps2)
        .with_upper(outer(&h), 10.0)
}
