//! Heuristic comparator: mix the energy beamformer with the beam steered at
//! the target, just enough to meet the range-accuracy requirement, and
//! spend the whole transmit budget.
//!
//! With `w_EB` the dominant eigenvector of `sum_m beta_m h_m h_m^H`, rotated
//! so `u^H w_EB` is real and non-negative,
//!
//! ```text
//! w(rho) = normalize(rho u / |u| + (1 - rho) w_EB),   A(rho)^2 = min(eps2, min_m P_max / |h_m^H w(rho)|^2)
//! ```
//!
//! and `rho*` is the smallest `rho` in `[0, 1]` with
//! `A(rho)^2 |u^H w(rho)|^2 >= eps1`.

use nalgebra::Complex;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::linalg::{canonical_phase, hermitian_eigen, outer};
use crate::sca::{argmax_feasible_by, epsilon_bounds, IsaptInstance, ScaError};
use crate::sensing::range_rmse;
use crate::{CMatrix, CVector};

/// Points in the sweep that brackets `rho*` before bisection.
const SWEEP_POINTS: usize = 64;
/// Width of the final bisection bracket.
const RHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("no channels")]
    NoChannels,
    #[error("{channels} channels but {weights} weights")]
    WeightCount { channels: usize, weights: usize },
    #[error("the weighted channel matrix is zero")]
    ZeroChannels,
    #[error(transparent)]
    Sca(#[from] ScaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineStatus {
    /// The range-accuracy constraint holds with equality at `rho*`.
    Optimal,
    /// The energy beamformer alone already meets the accuracy target
    /// (`rho* = 0`, constraint slack).
    SensingSlack,
    Infeasible,
}

impl BaselineStatus {
    pub fn is_feasible(self) -> bool {
        !matches!(self, Self::Infeasible)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSolution {
    pub tau: f64,
    pub amplitude: f64,
    /// Unit-norm beamforming vector.
    pub beam: CVector,
    pub mixing_rho: f64,
    /// Objective in W; NaN when infeasible.
    pub objective: f64,
    pub status: BaselineStatus,
    /// Whether the echo margin was non-decreasing over the bracketing sweep.
    pub monotone: bool,
}

/// Dominant unit eigenvector of `sum_m beta_m h_m h_m^H`, in canonical phase.
/// Ties between equal top eigenvalues go to the eigensolver's first vector.
pub fn energy_beamformer(channels: &ChannelSet, weights: &[f64]) -> Result<CVector, BaselineError> {
    let first = channels.vectors.first().ok_or(BaselineError::NoChannels)?;
    if weights.len() != channels.len() {
        return Err(BaselineError::WeightCount { channels: channels.len(), weights: weights.len() });
    }
    let n = first.len();
    let mut s = CMatrix::zeros(n, n);
    for (h, b) in channels.vectors.iter().zip(weights) {
        s += outer(h) * Complex::new(*b, 0.0);
    }
    let eig = hermitian_eigen(&s);
    if eig.values[0].is_nan() || eig.values[0] <= 0.0 {
        return Err(BaselineError::ZeroChannels);
    }
    let top = eig.vectors.column(0).into_owned();
    Ok(canonical_phase(&(&top / Complex::new(top.norm(), 0.0))))
}

/// Evaluates `w(rho)` and the largest admissible amplitude.
struct Mixer<'a> {
    steer: CVector,
    energy: CVector,
    eps2: f64,
    instance: &'a IsaptInstance,
}

impl Mixer<'_> {
    fn beam(&self, rho: f64) -> CVector {
        let w = &self.steer * Complex::new(rho, 0.0) + &self.energy * Complex::new(1.0 - rho, 0.0);
        // u^H w = rho |u| + (1 - rho) u^H w_EB > 0 for rho > 0, so w != 0
        let norm = w.norm();
        w / Complex::new(norm, 0.0)
    }

    fn amplitude(&self, beam: &CVector) -> f64 {
        let mut power = self.eps2;
        for (m, h) in self.instance.channels().vectors.iter().enumerate() {
            let gain = h.dotc(beam).norm_sqr();
            if gain > 0.0 {
                power = power.min(self.instance.p_max(m) / gain);
            }
        }
        power.sqrt()
    }

    /// `A^2 |u^H w|^2` at `rho`.
    fn echo(&self, rho: f64) -> f64 {
        let w = self.beam(rho);
        let a = self.amplitude(&w);
        a * a * self.instance.u().dotc(&w).norm_sqr()
    }
}

/// The baseline at one pulse duration.
pub fn solve_baseline_fixed_tau(tau: f64, instance: &IsaptInstance) -> Result<BaselineSolution, BaselineError> {
    let (eps1, eps2) = epsilon_bounds(tau, instance)?;
    let u = instance.u();
    let steer = u / Complex::new(u.norm(), 0.0);
    let mut energy = energy_beamformer(instance.channels(), instance.receivers().weights())?;
    let overlap = u.dotc(&energy);
    if overlap.norm() > 0.0 {
        energy *= overlap.conj() / overlap.norm();
    }
    let mixer = Mixer { steer, energy, eps2, instance };
    // a relative slack of 1e-12 absorbs round-off at the tau_min face
    let meets = |rho: f64| mixer.echo(rho) >= eps1 * (1.0 - 1e-12);

    let sweep: Vec<f64> = (0..SWEEP_POINTS).map(|k| mixer.echo(k as f64 / (SWEEP_POINTS - 1) as f64)).collect();
    let monotone = sweep.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let infeasible = BaselineSolution {
        tau,
        amplitude: 0.0,
        beam: CVector::zeros(u.len()),
        mixing_rho: f64::NAN,
        objective: f64::NAN,
        status: BaselineStatus::Infeasible,
        monotone,
    };
    let Some(first) = sweep.iter().position(|&e| e >= eps1 * (1.0 - 1e-12)) else {
        return Ok(infeasible);
    };
    let (rho, status) = if first == 0 {
        (0.0, BaselineStatus::SensingSlack)
    } else {
        let step = 1.0 / (SWEEP_POINTS - 1) as f64;
        let (mut lo, mut hi) = ((first - 1) as f64 * step, first as f64 * step);
        while hi - lo > RHO_TOL {
            let mid = 0.5 * (lo + hi);
            if meets(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (hi, BaselineStatus::Optimal)
    };
    let beam = canonical_phase(&mixer.beam(rho));
    let amplitude = mixer.amplitude(&beam);
    let objective = instance.vector_objective(tau, amplitude, &beam)?;
    Ok(BaselineSolution { tau, amplitude, beam, mixing_rho: rho, objective, status, monotone })
}

/// Relative deviation of the achieved range RMSE from the accuracy target.
pub fn sensing_equality_gap(solution: &BaselineSolution, instance: &IsaptInstance) -> Result<f64, BaselineError> {
    let s = instance.scenario();
    let rmse = range_rmse(solution.tau, solution.amplitude, &solution.beam, instance.constants(), s, instance.u())
        .map_err(ScaError::from)?;
    Ok((rmse - s.r_hat_max).abs() / s.r_hat_max)
}

/// Best baseline point over the pulse-duration grid, with every point.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDesign {
    pub best: BaselineSolution,
    pub points: Vec<BaselineSolution>,
}

pub fn grid_search_baseline(instance: &IsaptInstance) -> Result<BaselineDesign, BaselineError> {
    let points = instance
        .tau_grid()?
        .into_iter()
        .map(|tau| solve_baseline_fixed_tau(tau, instance))
        .collect::<Result<Vec<_>, _>>()?;
    baseline_from_points(points)
}

/// Picks the best feasible point; the smallest `tau` wins ties.
pub fn baseline_from_points(points: Vec<BaselineSolution>) -> Result<BaselineDesign, BaselineError> {
    let best = argmax_feasible_by(&points, |p| p.status.is_feasible().then_some(p.objective))
        .ok_or(ScaError::NoFeasiblePoint)?;
    Ok(BaselineDesign { best: points[best].clone(), points })
}
