//! Joint pulse-duration and beamforming design by successive convex
//! approximation (SCA) over a grid of pulse durations.
//!
//! With the transmit covariance `V = A^2 w w^H`, the per-slot harvested
//! power is
//!
//! ```text
//! Phi(V) = (tau / T(tau)) * sum_m beta_m phi(Tr{H_m V}),   H_m = h_m h_m^H
//! ```
//!
//! and the constraints become
//!
//! ```text
//! C1  Tr{U V} >= eps1(tau) = z^2 T^2 / (tau R_hat^2)      U = u u^H
//! C2  Tr{V}   <= eps2(tau) = min(T/tau P_avg, P_p)         (with C3)
//! C4  Tr{H_m V} <= P_max
//! C5  tau in [tau_min, tau_max]
//! ```
//!
//! For a fixed `tau`, each iteration replaces every `phi` with its tangent
//! at the current iterate and solves the resulting semidefinite program;
//! the rank constraint is dropped and the solutions come out rank one.
//! Because `phi` is convex on `[0, P_max]`, the tangent surrogate is a global
//! minorant, so the true objective never decreases between iterations.
//! The outer loop evaluates every grid point and keeps the best.
//!
//! Every matrix in the inner program lies in the span of `u` and the
//! channels, so the programs are solved in an orthonormal basis `Q` of that
//! span (dimension at most `M + 1`) and lifted back as `Q V Q^H`. Projecting
//! any feasible `V` onto the span keeps every constraint value and the
//! objective while not increasing `Tr{V}`, so nothing is lost.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Complex;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::eh::{harvested_power_phi, harvested_power_phi_prime, EhError, EhReceiverSet};
use crate::linalg::{canonical_phase, hermitian_eigen, outer, trace_product, HermitianEigen};
use crate::sdp::{self, HermitianLinearSdp, SdpError, SdpStatus};
use crate::sensing::{
    feasible_tau_grid, radar_constants, range_rmse, slot_duration, steering_vector, tau_max, tau_min,
    ArrayGeometry, RadarConstants, SensingError, SensingScenario,
};
use crate::{CMatrix, CVector};

/// Received powers may exceed `P_max` by this relative amount through
/// solver round-off; they are clamped before evaluating the rectifier.
const PEAK_TOLERANCE: f64 = 1e-8;
/// Smallest anchor power handed to `phi'`.
const MIN_ANCHOR_POWER: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("received power {p_in} W at node {node} exceeds the limit {p_max} W")]
    ReceiverOverdriven { node: usize, p_in: f64, p_max: f64 },
    #[error("no grid point admits a feasible design")]
    NoFeasiblePoint,
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Eh(#[from] EhError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBudget {
    /// Average transmit power in W.
    pub p_avg: f64,
    /// Peak transmit power in W.
    pub p_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaSettings {
    /// Stop when the objective changes by at most this many microwatts.
    pub epsilon_sca: f64,
    /// Or when it changes by at most this fraction of its value.
    pub relative_tol: f64,
    pub max_iters: usize,
    /// `lambda_2 / lambda_1` above which a solution is flagged.
    pub rank_tol: f64,
}

impl Default for ScaSettings {
    fn default() -> Self {
        Self { epsilon_sca: 1e-7, relative_tol: 1e-6, max_iters: 100, rank_tol: 1e-6 }
    }
}

/// Everything one design run needs: scenario, receivers, one channel draw,
/// budgets and solver settings.
#[derive(Debug, Clone)]
pub struct IsaptInstance {
    geometry: ArrayGeometry,
    scenario: SensingScenario,
    receivers: EhReceiverSet,
    channels: ChannelSet,
    budget: PowerBudget,
    n_tau: usize,
    settings: ScaSettings,
    u: CVector,
    u_outer: CMatrix,
    h_outer: Vec<CMatrix>,
    constants: RadarConstants,
    subspace: Subspace,
}

/// Orthonormal basis of `span{u, h_1, ..., h_M}` and the problem data
/// expressed in it.
#[derive(Debug, Clone)]
struct Subspace {
    basis: CMatrix,
    u_outer: CMatrix,
    h_outer: Vec<CMatrix>,
}

impl Subspace {
    fn new(u: &CVector, channels: &[CVector]) -> Self {
        let mut gram = outer(u) / Complex::new(u.norm_squared(), 0.0);
        for h in channels {
            if h.norm() > 0.0 {
                gram += outer(h) / Complex::new(h.norm_squared(), 0.0);
            }
        }
        let eig = hermitian_eigen(&gram);
        let keep = eig.values.iter().take_while(|&&l| l > 1e-13 * eig.values[0]).count();
        let basis = eig.vectors.columns(0, keep).into_owned();
        let reduce = |m: &CMatrix| crate::linalg::hermitian_part(&(basis.adjoint() * m * &basis));
        let u_outer = reduce(&outer(u));
        let h_outer = channels.iter().map(|h| reduce(&outer(h))).collect();
        Self { basis, u_outer, h_outer }
    }

    fn reduce(&self, m: &CMatrix) -> CMatrix {
        crate::linalg::hermitian_part(&(self.basis.adjoint() * m * &self.basis))
    }

    fn lift(&self, m: &CMatrix) -> CMatrix {
        crate::linalg::hermitian_part(&(&self.basis * m * self.basis.adjoint()))
    }
}

impl IsaptInstance {
    pub fn new(
        geometry: ArrayGeometry,
        scenario: SensingScenario,
        receivers: EhReceiverSet,
        channels: ChannelSet,
        budget: PowerBudget,
        n_tau: usize,
        settings: ScaSettings,
    ) -> Result<Self, ScaError> {
        geometry.validate()?;
        scenario.validate()?;
        let invalid = |msg: String| Err(ScaError::InvalidInstance(msg));
        if channels.len() != receivers.len() {
            return invalid(format!("{} channels for {} receivers", channels.len(), receivers.len()));
        }
        if let Some(h) = channels.vectors.iter().find(|h| h.len() != geometry.n_t) {
            return invalid(format!("channel of length {} for {} antennas", h.len(), geometry.n_t));
        }
        if !(budget.p_avg > 0.0 && budget.p_p > 0.0 && budget.p_avg.is_finite() && budget.p_p.is_finite()) {
            return invalid(format!("power budget must be positive, got {budget:?}"));
        }
        if n_tau == 0 {
            return invalid("the pulse-duration grid needs at least one point".into());
        }
        if !(settings.epsilon_sca > 0.0 && settings.relative_tol >= 0.0 && settings.max_iters > 0) {
            return invalid(format!("invalid SCA settings {settings:?}"));
        }
        let u = steering_vector(&geometry, scenario.alpha);
        let constants = radar_constants(&scenario, &geometry, &u);
        let u_outer = outer(&u);
        let h_outer = channels.vectors.iter().map(outer).collect();
        let subspace = Subspace::new(&u, &channels.vectors);
        Ok(Self { geometry, scenario, receivers, channels, budget, n_tau, settings, u, u_outer, h_outer, constants, subspace })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn scenario(&self) -> &SensingScenario {
        &self.scenario
    }

    pub fn receivers(&self) -> &EhReceiverSet {
        &self.receivers
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn budget(&self) -> PowerBudget {
        self.budget
    }

    pub fn n_tau(&self) -> usize {
        self.n_tau
    }

    pub fn settings(&self) -> &ScaSettings {
        &self.settings
    }

    /// Steering vector toward the sensing target.
    pub fn u(&self) -> &CVector {
        &self.u
    }

    pub fn constants(&self) -> &RadarConstants {
        &self.constants
    }

    pub fn tau_min(&self) -> Result<f64, ScaError> {
        Ok(tau_min(&self.scenario, &self.geometry, &self.constants, self.budget.p_p)?)
    }

    pub fn tau_grid(&self) -> Result<Vec<f64>, ScaError> {
        Ok(feasible_tau_grid(&self.scenario, &self.geometry, &self.constants, self.budget.p_p, self.n_tau)?)
    }

    /// Peak received power of node `m`.
    pub fn p_max(&self, m: usize) -> f64 {
        self.receivers.circuits()[m].p_max
    }

    /// `Tr{H_m V}` for every node.
    pub fn node_powers(&self, v: &CMatrix) -> Vec<f64> {
        self.h_outer.iter().map(|h| trace_product(h, v)).collect()
    }

    /// Brings received powers into `[0, P_max]`, tolerating round-off.
    fn clamp_powers(&self, powers: &[f64]) -> Result<Vec<f64>, ScaError> {
        powers
            .iter()
            .enumerate()
            .map(|(m, &p)| {
                let p_max = self.p_max(m);
                if p > p_max * (1.0 + PEAK_TOLERANCE) {
                    Err(ScaError::ReceiverOverdriven { node: m, p_in: p, p_max })
                } else {
                    Ok(p.clamp(0.0, p_max))
                }
            })
            .collect()
    }

    fn weighted_phi(&self, tau: f64, powers: &[f64]) -> Result<f64, ScaError> {
        let powers = self.clamp_powers(powers)?;
        let mut total = 0.0;
        for ((circuit, beta), p) in self.receivers.circuits().iter().zip(self.receivers.weights()).zip(powers) {
            total += beta * harvested_power_phi(p, circuit)?;
        }
        Ok(tau / slot_duration(tau, &self.scenario) * total)
    }

    /// `Phi(V)`, the matrix form of the objective.
    pub fn matrix_objective(&self, tau: f64, v: &CMatrix) -> Result<f64, ScaError> {
        self.weighted_phi(tau, &self.node_powers(v))
    }

    /// The objective for an explicit pulse `(tau, amplitude, beam)`.
    pub fn vector_objective(&self, tau: f64, amplitude: f64, beam: &CVector) -> Result<f64, ScaError> {
        let powers: Vec<f64> = self
            .channels
            .vectors
            .iter()
            .map(|h| crate::eh::received_power(amplitude, beam, h))
            .collect::<Result<_, _>>()?;
        self.weighted_phi(tau, &powers)
    }
}

/// `(eps1, eps2)`: the received-echo floor and the transmit-power cap at `tau`.
pub fn epsilon_bounds(tau: f64, instance: &IsaptInstance) -> Result<(f64, f64), ScaError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SensingError::InvalidParameter { name: "tau", value: tau, reason: "must be positive" }.into());
    }
    let s = &instance.scenario;
    let slot = slot_duration(tau, s);
    let z = instance.constants.z;
    let eps1 = z * z * slot * slot / (tau * s.r_hat_max * s.r_hat_max);
    let eps2 = (slot / tau * instance.budget.p_avg).min(instance.budget.p_p);
    Ok((eps1, eps2))
}

/// Why the starting covariance was scaled below the peak-power beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitLimit {
    /// The average-power budget at this `tau` is below `P_p`.
    TransmitPower,
    /// Some node would be driven beyond `P_max`.
    ReceiverPeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPoint {
    pub matrix: CMatrix,
    /// Factor applied to `(P_p / |u|^2) u u^H`.
    pub scale: f64,
    /// The binding limit when `scale < 1`.
    pub limit: Option<InitLimit>,
}

/// Starting covariance: all of `P_p` steered at the target, scaled down to
/// the transmit cap at `tau` and to every node's `P_max`.
pub fn initial_matrix(tau: f64, instance: &IsaptInstance) -> Result<InitialPoint, ScaError> {
    let (_, eps2) = epsilon_bounds(tau, instance)?;
    let p_p = instance.budget.p_p;
    let v0 = &instance.u_outer * Complex::new(p_p / instance.u.norm_squared(), 0.0);
    let mut scale = 1.0;
    let mut limit = None;
    if eps2 < p_p {
        scale = eps2 / p_p;
        limit = Some(InitLimit::TransmitPower);
    }
    for (m, p) in instance.node_powers(&v0).into_iter().enumerate() {
        let p_max = instance.p_max(m);
        if p * scale > p_max {
            scale = p_max / p;
            limit = Some(InitLimit::ReceiverPeak);
        }
    }
    Ok(InitialPoint { matrix: v0 * Complex::new(scale, 0.0), scale, limit })
}

/// Tangent surrogate of `Phi` at `anchor`, evaluated at `v`.
pub fn linearized_objective(v: &CMatrix, anchor: &CMatrix, tau: f64, instance: &IsaptInstance) -> Result<f64, ScaError> {
    let anchor_powers = instance.clamp_powers(&instance.node_powers(anchor))?;
    let base = instance.weighted_phi(tau, &anchor_powers)?;
    let weights = surrogate_weights(&anchor_powers, instance)?;
    let delta = v - anchor;
    let slope: f64 = instance.h_outer.iter().zip(&weights).map(|(h, w)| w * trace_product(h, &delta)).sum();
    Ok(base + tau / slot_duration(tau, &instance.scenario) * slope)
}

/// `beta_m phi'(p_m)` at clamped anchor powers.
fn surrogate_weights(anchor_powers: &[f64], instance: &IsaptInstance) -> Result<Vec<f64>, ScaError> {
    anchor_powers
        .iter()
        .zip(instance.receivers.circuits().iter().zip(instance.receivers.weights()))
        .map(|(&p, (circuit, beta))| {
            let p = p.clamp(MIN_ANCHOR_POWER, circuit.p_max);
            Ok(beta * harvested_power_phi_prime(p, circuit)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedTauStatus {
    /// Stopping rule met and every iterate rank one.
    Converged,
    /// Stopped at the iteration cap.
    IterationLimit,
    /// Some iterate exceeded the rank tolerance; the dominant eigenpair is
    /// still returned.
    RankWarning,
    Infeasible,
    NumericalFailure,
}

impl FixedTauStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, Self::Converged | Self::IterationLimit | Self::RankWarning)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedTauResult {
    pub tau: f64,
    pub amplitude: f64,
    /// Unit-norm beamforming vector.
    pub beam: CVector,
    pub v_final: CMatrix,
    /// Objective re-evaluated from `(amplitude, beam)`, in W.
    pub objective: f64,
    /// `Phi(v_final)`.
    pub matrix_objective: f64,
    /// SDP solves performed.
    pub iterations: usize,
    /// Largest `lambda_2 / lambda_1` over all iterates.
    pub rank_ratio: f64,
    /// `Phi` at the starting point and after every iteration.
    pub history: Vec<f64>,
    pub status: FixedTauStatus,
    pub init: Option<InitialPoint>,
    /// Largest KKT residual over the inner solves.
    pub max_kkt_residual: f64,
    /// Largest relative deviation between the trace-constraint multiplier
    /// and the top eigenvalue of the dual matrix it bounds.
    pub max_trace_multiplier_gap: f64,
}

impl FixedTauResult {
    fn failed(tau: f64, n_t: usize, status: FixedTauStatus) -> Self {
        Self {
            tau,
            amplitude: 0.0,
            beam: CVector::zeros(n_t),
            v_final: CMatrix::zeros(n_t, n_t),
            objective: f64::NAN,
            matrix_objective: f64::NAN,
            iterations: 0,
            rank_ratio: 0.0,
            history: Vec::new(),
            status,
            init: None,
            max_kkt_residual: 0.0,
            max_trace_multiplier_gap: 0.0,
        }
    }

    /// Smallest non-positive change between consecutive objectives (0 when
    /// the sequence is non-decreasing).
    pub fn worst_ascent_drop(&self) -> f64 {
        self.history.windows(2).map(|w| (w[1] - w[0]).min(0.0)).fold(0.0, f64::min)
    }
}

fn extract(tau: f64, v: &CMatrix, instance: &IsaptInstance) -> Result<(f64, CVector, f64), ScaError> {
    let eig = hermitian_eigen(v);
    if eig.values.len() > 1 && eig.values[1] > instance.settings.rank_tol * eig.values[0] {
        return best_rank_one(tau, &eig, instance);
    }
    let lambda1 = eig.values[0].max(0.0);
    let top = eig.vectors.column(0).into_owned();
    let beam = canonical_phase(&(&top / Complex::new(top.norm(), 0.0)));
    let amplitude = lambda1.sqrt();
    let objective = instance.vector_objective(tau, amplitude, &beam)?;
    Ok((amplitude, beam, objective))
}

/// Feasible beam for a `V` that is not rank one.
///
/// Searches unit beams `cos(t) e1 + sin(t) e^{jp} e2` over the two leading
/// eigenvectors, plus the beam steered at the target. Each direction gets
/// the largest amplitude that respects the transmit cap and every node's
/// `P_max`; directions whose echo then misses the accuracy floor are
/// dropped. A coarse grid is refined by pattern search.
fn best_rank_one(tau: f64, eig: &HermitianEigen, instance: &IsaptInstance) -> Result<(f64, CVector, f64), ScaError> {
    let (eps1, eps2) = epsilon_bounds(tau, instance)?;
    let e1 = eig.vectors.column(0).into_owned();
    let e2 = eig.vectors.column(1).into_owned();
    let score = |beam: &CVector| -> Option<(f64, f64)> {
        let mut a2 = eps2;
        for (m, h) in instance.channels.vectors.iter().enumerate() {
            let gain = h.dotc(beam).norm_sqr();
            if gain > 0.0 {
                a2 = a2.min(instance.p_max(m) / gain);
            }
        }
        if a2 * instance.u.dotc(beam).norm_sqr() < eps1 {
            return None;
        }
        let objective = instance.vector_objective(tau, a2.sqrt(), beam).ok()?;
        Some((a2.sqrt(), objective))
    };
    let direction = |t: f64, p: f64| -> CVector { &e1 * Complex::new(t.cos(), 0.0) + &e2 * Complex::from_polar(t.sin(), p) };

    let steered = &instance.u / Complex::new(instance.u.norm(), 0.0);
    let mut best: Option<(f64, f64, f64, CVector)> = score(&steered).map(|(_, f)| (f, f64::NAN, f64::NAN, steered.clone()));
    let consider = |t: f64, p: f64, best: &mut Option<(f64, f64, f64, CVector)>| -> bool {
        let beam = direction(t, p);
        match score(&beam) {
            Some((_, f)) if best.as_ref().is_none_or(|b| f > b.0) => {
                *best = Some((f, t, p, beam));
                true
            }
            _ => false,
        }
    };
    let (n_t, n_p) = (33, 64);
    for i in 0..n_t {
        for j in 0..n_p {
            let t = FRAC_PI_2 * i as f64 / (n_t - 1) as f64;
            let p = 2.0 * PI * j as f64 / n_p as f64;
            consider(t, p, &mut best);
        }
    }
    if let Some((_, t0, p0, _)) = best.clone() {
        if t0.is_finite() {
            let (mut t, mut p) = (t0, p0);
            let (mut dt, mut dp) = (FRAC_PI_2 / 64.0, PI / 64.0);
            while dt > 1e-10 {
                let moved = [(dt, 0.0), (-dt, 0.0), (0.0, dp), (0.0, -dp)]
                    .into_iter()
                    .any(|(a, b)| consider(t + a, p + b, &mut best));
                if moved {
                    let b = best.as_ref().expect("a move implies a best point");
                    (t, p) = (b.1, b.2);
                } else {
                    dt *= 0.5;
                    dp *= 0.5;
                }
            }
        }
    }
    let Some((_, _, _, beam)) = best else {
        return Err(ScaError::NoFeasiblePoint);
    };
    let beam = canonical_phase(&beam);
    let (amplitude, objective) = score(&beam).ok_or(ScaError::NoFeasiblePoint)?;
    Ok((amplitude, beam, objective))
}

/// The SCA loop at one pulse duration.
pub fn solve_fixed_tau(tau: f64, instance: &IsaptInstance) -> Result<FixedTauResult, ScaError> {
    solve_fixed_tau_from(tau, instance, None)
}

/// Scales `start` into the transmit cap at `tau` and every node's `P_max`.
/// Falls back to [`initial_matrix`] when the scaled matrix misses the echo
/// floor.
pub fn scaled_start(tau: f64, start: &CMatrix, instance: &IsaptInstance) -> Result<InitialPoint, ScaError> {
    let (eps1, eps2) = epsilon_bounds(tau, instance)?;
    let trace: f64 = start.diagonal().iter().map(|c| c.re).sum();
    let mut scale = 1.0;
    let mut limit = None;
    if trace > eps2 {
        scale = eps2 / trace;
        limit = Some(InitLimit::TransmitPower);
    }
    for (m, p) in instance.node_powers(start).into_iter().enumerate() {
        let p_max = instance.p_max(m);
        if p * scale > p_max {
            scale = p_max / p;
            limit = Some(InitLimit::ReceiverPeak);
        }
    }
    if scale * trace_product(&instance.u_outer, start) < eps1 {
        return initial_matrix(tau, instance);
    }
    Ok(InitialPoint { matrix: start * Complex::new(scale, 0.0), scale, limit })
}

/// The SCA loop at one pulse duration, starting from `start` (scaled into
/// the power constraints) instead of the target-steered beam.
pub fn solve_fixed_tau_from(tau: f64, instance: &IsaptInstance, start: Option<&CMatrix>) -> Result<FixedTauResult, ScaError> {
    let (eps1, eps2) = epsilon_bounds(tau, instance)?;
    let n_t = instance.geometry.n_t;
    let u_gain = instance.u.norm_squared();
    let echo_cap = eps2 * u_gain;
    if eps1 > echo_cap * (1.0 + 1e-9) {
        return Ok(FixedTauResult::failed(tau, n_t, FixedTauStatus::Infeasible));
    }
    if eps1 >= echo_cap * (1.0 - 1e-9) {
        // C1 and C2/C3 leave a single point: the full cap steered at u.
        let v = &instance.u_outer * Complex::new(eps2 / u_gain, 0.0);
        if instance.clamp_powers(&instance.node_powers(&v)).is_err() {
            return Ok(FixedTauResult::failed(tau, n_t, FixedTauStatus::Infeasible));
        }
        let matrix_objective = instance.matrix_objective(tau, &v)?;
        let (amplitude, beam, objective) = extract(tau, &v, instance)?;
        return Ok(FixedTauResult {
            tau,
            amplitude,
            beam,
            v_final: v,
            objective,
            matrix_objective,
            iterations: 0,
            rank_ratio: 0.0,
            history: vec![matrix_objective],
            status: FixedTauStatus::Converged,
            init: None,
            max_kkt_residual: 0.0,
            max_trace_multiplier_gap: 0.0,
        });
    }

    let init = match start {
        Some(v) => scaled_start(tau, v, instance)?,
        None => initial_matrix(tau, instance)?,
    };
    let mut anchor = init.matrix.clone();
    let mut h_prev = instance.matrix_objective(tau, &anchor)?;
    let mut history = vec![h_prev];
    let mut rank_ratio: f64 = 0.0;
    let mut max_kkt: f64 = 0.0;
    let mut max_xi_gap: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let settings = instance.settings;
    let abs_tol = settings.epsilon_sca * 1e-6;

    let sub = &instance.subspace;
    let r = sub.basis.ncols();
    let mut base = HermitianLinearSdp::new(CMatrix::zeros(r, r))
        .with_lower(sub.u_outer.clone(), eps1)
        .with_upper(CMatrix::identity(r, r), eps2);
    for (m, h) in sub.h_outer.iter().enumerate() {
        base = base.with_upper(h.clone(), instance.p_max(m));
    }

    while iterations < settings.max_iters {
        let powers = instance.clamp_powers(&instance.node_powers(&anchor))?;
        let weights = surrogate_weights(&powers, instance)?;
        let mut objective = CMatrix::zeros(r, r);
        for (h, w) in sub.h_outer.iter().zip(&weights) {
            objective += h * Complex::new(*w, 0.0);
        }
        let mut problem = base.clone();
        problem.objective = objective;
        let sol = sdp::solve(&problem, Some(&sub.reduce(&anchor)))?;
        iterations += 1;
        match sol.status {
            SdpStatus::Optimal => {}
            SdpStatus::Infeasible => return Ok(FixedTauResult::failed(tau, n_t, FixedTauStatus::Infeasible)),
            SdpStatus::NumericalFailure => {
                let mut r = FixedTauResult::failed(tau, n_t, FixedTauStatus::NumericalFailure);
                r.iterations = iterations;
                r.history = history;
                return Ok(r);
            }
        }
        max_kkt = max_kkt.max(sol.kkt_residuals.max());
        max_xi_gap = max_xi_gap.max(trace_multiplier_gap(&problem, &sol));
        // a non-unique optimum comes back as the centre of its face; move to
        // a rank-one point of that face before extracting a beam
        let reduced = sdp::reduce_rank(&problem, &sol.v_matrix);
        rank_ratio = rank_ratio.max(sdp::rank_one_ratio(&reduced));
        let v = sub.lift(&reduced);
        let h = instance.matrix_objective(tau, &v)?;
        if h < h_prev {
            // the tangent bound guarantees ascent only up to the inner
            // solver's tolerance; a step below it means no further progress
            converged = true;
            break;
        }
        history.push(h);
        anchor = v;
        let change = (h - h_prev).abs();
        if change <= abs_tol || change <= settings.relative_tol * h.abs() {
            converged = true;
            break;
        }
        h_prev = h;
    }

    let matrix_objective = *history.last().unwrap_or(&f64::NAN);
    let (amplitude, beam, objective) = extract(tau, &anchor, instance)?;
    let status = if rank_ratio > settings.rank_tol {
        FixedTauStatus::RankWarning
    } else if converged {
        FixedTauStatus::Converged
    } else {
        FixedTauStatus::IterationLimit
    };
    Ok(FixedTauResult {
        tau,
        amplitude,
        beam,
        v_final: anchor,
        objective,
        matrix_objective,
        iterations,
        rank_ratio,
        history,
        status,
        init: Some(init),
        max_kkt_residual: max_kkt,
        max_trace_multiplier_gap: max_xi_gap,
    })
}

/// `|xi - lambda_max(Z)| / max(xi, lambda_max(C))` where `xi` multiplies the
/// trace cap and `Z = C + mu U - sum_m mu_m H_m` gathers the other terms of
/// the dual constraint `xi I - Z >= 0`. At an optimum with `V != 0` the
/// bound is tight.
fn trace_multiplier_gap(problem: &HermitianLinearSdp, sol: &sdp::SdpSolution) -> f64 {
    let xi = sol.duals.upper[0];
    let mut z = problem.objective.clone();
    for (c, y) in problem.lower.iter().zip(&sol.duals.lower) {
        z += &c.matrix * Complex::new(*y, 0.0);
    }
    for (c, y) in problem.upper.iter().zip(&sol.duals.upper).skip(1) {
        z -= &c.matrix * Complex::new(*y, 0.0);
    }
    let top = hermitian_eigen(&z).values[0];
    let scale = xi.abs().max(hermitian_eigen(&problem.objective).values[0].abs());
    if scale == 0.0 {
        0.0
    } else {
        (xi - top).abs() / scale
    }
}

/// Relative slack of every constraint at a design; non-negative means
/// satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintAudit {
    /// `(R_hat_max - rmse) / R_hat_max`.
    pub c1: f64,
    /// `(P_avg - (tau/T) A^2) / P_avg`.
    pub c2: f64,
    /// `(P_p - A^2) / P_p`.
    pub c3: f64,
    /// `(P_max - p_m) / P_max` per node.
    pub c4: Vec<f64>,
    /// Distance of `tau` inside `[tau_min, tau_max]`, relative to `tau_max`.
    pub c5: f64,
}

impl ConstraintAudit {
    pub fn min_slack(&self) -> f64 {
        self.c4.iter().copied().fold(self.c1.min(self.c2).min(self.c3).min(self.c5), f64::min)
    }
}

/// Checks an explicit pulse against every constraint of the design problem.
pub fn audit_design(tau: f64, amplitude: f64, beam: &CVector, instance: &IsaptInstance) -> Result<ConstraintAudit, ScaError> {
    let s = &instance.scenario;
    let b = instance.budget;
    let slot = slot_duration(tau, s);
    let rmse = range_rmse(tau, amplitude, beam, &instance.constants, s, &instance.u)?;
    let power = amplitude * amplitude;
    let c4 = instance
        .channels
        .vectors
        .iter()
        .enumerate()
        .map(|(m, h)| {
            let p_max = instance.p_max(m);
            Ok((p_max - crate::eh::received_power(amplitude, beam, h)?) / p_max)
        })
        .collect::<Result<_, EhError>>()?;
    let lo = instance.tau_min()?;
    let hi = tau_max(s);
    Ok(ConstraintAudit {
        c1: (s.r_hat_max - rmse) / s.r_hat_max,
        c2: (b.p_avg - tau / slot * power) / b.p_avg,
        c3: (b.p_p - power) / b.p_p,
        c4,
        c5: (tau - lo).min(hi - tau) / hi,
    })
}

/// Output of the full design: the best grid point plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub tau_star: f64,
    pub amplitude_star: f64,
    pub beam_star: CVector,
    /// Objective at `tau_star`, in W.
    pub objective: f64,
    /// Every grid point, in increasing `tau`.
    pub points: Vec<FixedTauResult>,
    pub audit: ConstraintAudit,
    pub range_rmse: f64,
    pub received_powers: Vec<f64>,
    pub harvested_powers: Vec<f64>,
    /// `tau_star / T(tau_star)`.
    pub duty_cycle: f64,
}

impl DesignSolution {
    /// `(tau, objective)` with `None` for infeasible or failed points.
    pub fn curve(&self) -> Vec<(f64, Option<f64>)> {
        self.points.iter().map(|p| (p.tau, p.status.is_feasible().then_some(p.objective))).collect()
    }
}

/// Index of the best feasible point; the smallest `tau` wins ties.
pub fn argmax_feasible(points: &[FixedTauResult]) -> Option<usize> {
    argmax_feasible_by(points, |p| p.status.is_feasible().then_some(p.objective))
}

/// Index of the largest `Some` value, the earliest one on ties. Points are
/// in increasing `tau`, so ties go to the shortest pulse.
pub fn argmax_feasible_by<T>(points: &[T], value: impl Fn(&T) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(v) = value(p) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Runs the SCA loop on every grid point and returns the best design.
pub fn grid_search(instance: &IsaptInstance) -> Result<DesignSolution, ScaError> {
    let points = instance
        .tau_grid()?
        .into_iter()
        .map(|tau| solve_fixed_tau(tau, instance))
        .collect::<Result<Vec<_>, _>>()?;
    design_from_points(points, instance)
}

/// Assembles a [`DesignSolution`] from already evaluated grid points.
pub fn design_from_points(points: Vec<FixedTauResult>, instance: &IsaptInstance) -> Result<DesignSolution, ScaError> {
    let best = argmax_feasible(&points).ok_or(ScaError::NoFeasiblePoint)?;
    let p = &points[best];
    let (tau, amplitude, beam) = (p.tau, p.amplitude, p.beam.clone());
    let s = &instance.scenario;
    let received_powers: Vec<f64> = instance
        .channels
        .vectors
        .iter()
        .map(|h| crate::eh::received_power(amplitude, &beam, h))
        .collect::<Result<_, _>>()?;
    let clamped = instance.clamp_powers(&received_powers)?;
    let harvested_powers = clamped
        .iter()
        .zip(instance.receivers.circuits())
        .map(|(&p, c)| harvested_power_phi(p, c))
        .collect::<Result<_, _>>()?;
    Ok(DesignSolution {
        tau_star: tau,
        amplitude_star: amplitude,
        objective: p.objective,
        audit: audit_design(tau, amplitude, &beam, instance)?,
        range_rmse: range_rmse(tau, amplitude, &beam, &instance.constants, s, &instance.u)?,
        duty_cycle: tau / slot_duration(tau, s),
        beam_star: beam,
        received_powers,
        harvested_powers,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::EhNodePlacement;
    use crate::eh::EhCircuit;

    fn instance(seed: u64, p_avg: f64) -> IsaptInstance {
        let geometry = ArrayGeometry::reference();
        let scenario = SensingScenario::reference();
        let placements = EhNodePlacement::reference_layout();
        let channels = ChannelSet::generate(seed, &placements, &geometry, 1.0);
        let receivers = EhReceiverSet::uniform(EhCircuit::reference(), 3).unwrap();
        IsaptInstance::new(
            geometry,
            scenario,
            receivers,
            channels,
            PowerBudget { p_avg, p_p: 0.5 },
            50,
            ScaSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn rank_two_optimum_still_yields_a_feasible_beam() {
        // close nodes and a large peak budget saturate every receiver with
        // power to spare, and the relaxation optimum is then rank two
        let geometry = ArrayGeometry::reference();
        let scenario = SensingScenario { r_min: 5.0, ..SensingScenario::reference() };
        let placements = EhNodePlacement::reference_layout();
        let channels = ChannelSet::generate(18, &placements, &geometry, 1.0);
        let receivers = EhReceiverSet::uniform(EhCircuit::reference(), 3).unwrap();
        let budget = PowerBudget { p_avg: 0.5, p_p: 1.0 };
        let inst = IsaptInstance::new(geometry, scenario, receivers, channels, budget, 50, ScaSettings::default()).unwrap();
        let tau = inst.tau_grid().unwrap()[40];
        let r = solve_fixed_tau(tau, &inst).unwrap();
        assert_eq!(r.status, FixedTauStatus::RankWarning);
        assert!(r.rank_ratio > 1e-3);
        let audit = audit_design(tau, r.amplitude, &r.beam, &inst).unwrap();
        assert!(audit.min_slack() >= -1e-9, "{audit:?}");
        // a rank-one beam can only lose against the relaxation
        assert!(r.objective <= r.matrix_objective);
        assert!(r.objective > 0.9 * r.matrix_objective);
    }

    #[test]
    fn epsilon_examples() {
        let inst = instance(1, 0.1);
        let tau = 9.577e-8;
        let (_, eps2) = epsilon_bounds(tau, &inst).unwrap();
        let slot = 40.0 / 3e8 + tau;
        assert!((eps2 - slot / tau * 0.1).abs() < 1e-15);
        assert!((eps2 - 0.2392).abs() < 1e-3);
        let inst = instance(1, 0.5);
        assert_eq!(epsilon_bounds(tau, &inst).unwrap().1, 0.5);
        // at tau_min the echo floor meets the peak-power beam exactly
        let t0 = inst.tau_min().unwrap();
        let (eps1, eps2) = epsilon_bounds(t0, &inst).unwrap();
        assert!((eps1 / (eps2 * 10.0) - 1.0).abs() < 1e-12);
        assert!(epsilon_bounds(0.0, &inst).is_err());
    }

    #[test]
    fn initial_matrix_examples() {
        let inst = instance(2, 0.5);
        let init = initial_matrix(1.2e-7, &inst).unwrap();
        assert_eq!(init.scale, 1.0);
        assert_eq!(init.limit, None);
        assert!(sdp::rank_one_ratio(&init.matrix) < 1e-12);
        assert!((trace_product(&CMatrix::identity(10, 10), &init.matrix) - 0.5).abs() < 1e-15);
        assert!((trace_product(&inst.u_outer, &init.matrix) - 5.0).abs() < 1e-13);
        let init = initial_matrix(9.577e-8, &instance(2, 0.1)).unwrap();
        assert_eq!(init.limit, Some(InitLimit::TransmitPower));
        assert!(init.scale < 1.0);
    }

    #[test]
    fn linearization_is_tangent_and_minorant() {
        let inst = instance(3, 0.5);
        let tau = 1e-7;
        let anchor = initial_matrix(tau, &inst).unwrap().matrix;
        let at_anchor = linearized_objective(&anchor, &anchor, tau, &inst).unwrap();
        assert_eq!(at_anchor, inst.matrix_objective(tau, &anchor).unwrap());
        for k in 0..20 {
            let h = &inst.channels.vectors[k % 3];
            let v = (outer(h) * Complex::new(0.3 * (k + 1) as f64 / 20.0, 0.0) / Complex::new(h.norm_squared(), 0.0))
                + &anchor * Complex::new(0.5, 0.0);
            if inst.clamp_powers(&inst.node_powers(&v)).is_err() {
                continue;
            }
            let lin = linearized_objective(&v, &anchor, tau, &inst).unwrap();
            assert!(lin <= inst.matrix_objective(tau, &v).unwrap() + 1e-18);
        }
    }

    #[test]
    fn fixed_tau_ascends_and_audits() {
        let inst = instance(4, 0.5);
        let r = solve_fixed_tau(1.2e-7, &inst).unwrap();
        assert_eq!(r.status, FixedTauStatus::Converged);
        assert!(r.worst_ascent_drop() >= -1e-10);
        assert!(r.history[1] >= r.history[0]);
        assert!(r.rank_ratio <= 1e-6);
        assert!(r.max_kkt_residual <= 1e-8);
        assert!((r.beam.norm() - 1.0).abs() < 1e-9);
        assert!(((r.objective - r.matrix_objective) / r.objective).abs() < 1e-9);
        let audit = audit_design(r.tau, r.amplitude, &r.beam, &inst).unwrap();
        assert!(audit.min_slack() >= -1e-8, "{audit:?}");
        assert!(r.max_trace_multiplier_gap < 1e-6, "{}", r.max_trace_multiplier_gap);
    }

    #[test]
    fn recovers_from_stalled_warm_start() {
        // the anchor from the second iteration here stalls the inner solver
        let inst = instance(30, 0.1);
        let r = solve_fixed_tau(3.41088346532402e-8, &inst).unwrap();
        assert_eq!(r.status, FixedTauStatus::Converged);
        assert!(r.max_kkt_residual <= 1e-8);
        assert!(r.worst_ascent_drop() >= -1e-10);
    }

    #[test]
    fn degenerate_first_grid_point() {
        let inst = instance(5, 0.5);
        let t0 = inst.tau_min().unwrap();
        let r = solve_fixed_tau(t0, &inst).unwrap();
        assert_eq!(r.status, FixedTauStatus::Converged);
        assert_eq!(r.iterations, 0);
        let audit = audit_design(r.tau, r.amplitude, &r.beam, &inst).unwrap();
        assert!(audit.c1.abs() < 1e-8);
        assert!(audit.min_slack() >= -1e-8);
        assert!((r.amplitude - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_below_tau_min() {
        let inst = instance(6, 0.5);
        let t0 = inst.tau_min().unwrap();
        let r = solve_fixed_tau(0.9 * t0, &inst).unwrap();
        assert_eq!(r.status, FixedTauStatus::Infeasible);
        assert!(!r.status.is_feasible());
    }

    #[test]
    fn argmax_prefers_smallest_tau_on_ties() {
        let mut a = FixedTauResult::failed(1.0, 2, FixedTauStatus::Converged);
        a.objective = 1.0;
        let mut b = a.clone();
        b.tau = 2.0;
        let mut c = a.clone();
        c.tau = 3.0;
        c.status = FixedTauStatus::Infeasible;
        c.objective = 5.0;
        assert_eq!(argmax_feasible(&[a.clone(), b.clone(), c.clone()]), Some(0));
        b.objective = 1.5;
        assert_eq!(argmax_feasible(&[a, b, c.clone()]), Some(1));
        assert_eq!(argmax_feasible(&[c]), None);
    }

    #[test]
    fn reduced_program_matches_full_space() {
        let inst = instance(7, 0.1);
        let tau = 6e-8;
        let (eps1, eps2) = epsilon_bounds(tau, &inst).unwrap();
        let anchor = initial_matrix(tau, &inst).unwrap().matrix;
        let powers = inst.clamp_powers(&inst.node_powers(&anchor)).unwrap();
        let weights = surrogate_weights(&powers, &inst).unwrap();
        let build = |u: &CMatrix, hs: &[CMatrix], n: usize| {
            let mut c = CMatrix::zeros(n, n);
            for (h, w) in hs.iter().zip(&weights) {
                c += h * Complex::new(*w, 0.0);
            }
            let mut p = HermitianLinearSdp::new(c).with_lower(u.clone(), eps1).with_upper(CMatrix::identity(n, n), eps2);
            for h in hs {
                p = p.with_upper(h.clone(), 25e-6);
            }
            p
        };
        let full = sdp::solve(&build(&inst.u_outer, &inst.h_outer, 10), None).unwrap();
        let sub = &inst.subspace;
        assert_eq!(sub.basis.ncols(), 4);
        let reduced = sdp::solve(&build(&sub.u_outer, &sub.h_outer, 4), None).unwrap();
        assert_eq!(full.status, SdpStatus::Optimal);
        assert_eq!(reduced.status, SdpStatus::Optimal);
        let rel = (full.primal_objective - reduced.primal_objective).abs() / full.primal_objective.abs();
        assert!(rel < 1e-8, "{rel}");
        let top = |v: &CMatrix| hermitian_eigen(v).vectors.column(0).into_owned();
        let (a, b) = (top(&sub.lift(&reduced.v_matrix)), top(&full.v_matrix));
        assert!(1.0 - a.dotc(&b).norm() < 1e-9);
    }
}
