//! Pulse radar timing and range accuracy.
//!
//! The transceiver emits a rectangular pulse of duration `tau` once per slot
//! of length `T(tau) = 2 R_max / c + tau`, and may not transmit while echoes
//! from the closest admissible target are still arriving, so
//! `tau <= 2 R_min / c`. With `N = T_sen / T(tau)` coherently integrated
//! pulses, the RMS range error for amplitude `A` and beam `w` is
//!
//! ```text
//! R_rms = z * sqrt( T(tau)^2 / (tau A^2 |u^H w|^2) )
//! ```
//!
//! where `z = c sqrt(z2) / (2 B sqrt(z1))` collects the radar equation and
//! noise constants. Requiring `R_rms <= R_hat_max` with all peak power on the
//! target gives a quadratic in `tau`; its smaller root is the shortest pulse
//! that can meet the accuracy target.

use std::f64::consts::PI;

use nalgebra::Complex;
use thiserror::Error;

use crate::CVector;

/// Propagation speed used by the reference scenario, in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("echo gain |u^H w| is zero; range error is unbounded")]
    UnboundedRmse,
    #[error("accuracy target unreachable: z3^2 - 2 z3 z4 = {discriminant:e} < 0")]
    NoRealRoot { discriminant: f64 },
    #[error("shortest admissible pulse {tau_min:e} s exceeds the longest {tau_max:e} s")]
    EmptyPulseWindow { tau_min: f64, tau_max: f64 },
    #[error("grid needs at least one point")]
    EmptyGrid,
}

fn positive(name: &'static str, value: f64) -> Result<(), SensingError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SensingError::InvalidParameter { name, value, reason: "must be positive and finite" })
    }
}

/// Uniform linear transmit array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_t: usize,
    /// Element spacing in m.
    pub spacing: f64,
    /// Carrier wavelength in m.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_t: usize, spacing: f64, wavelength: f64) -> Result<Self, SensingError> {
        let g = Self { n_t, spacing, wavelength };
        g.validate()?;
        Ok(g)
    }

    /// Ten elements at half-wavelength spacing, 12.5 cm carrier.
    pub fn reference() -> Self {
        Self { n_t: 10, spacing: 0.0625, wavelength: 0.125 }
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        if self.n_t == 0 {
            return Err(SensingError::InvalidParameter {
                name: "n_t",
                value: 0.0,
                reason: "at least one antenna required",
            });
        }
        positive("spacing", self.spacing)?;
        positive("wavelength", self.wavelength)
    }
}

/// Radar coverage, timing and noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingScenario {
    /// Closest admissible target range in m.
    pub r_min: f64,
    /// Farthest covered target range in m.
    pub r_max: f64,
    /// Direction of the sensing target in rad.
    pub alpha: f64,
    /// Radar cross-section in m^2.
    pub sigma_rcs: f64,
    /// Bandwidth in Hz.
    pub bandwidth: f64,
    /// Receiver noise power in W.
    pub noise_power: f64,
    /// Sensing frame in s.
    pub t_sen: f64,
    /// Channel coherence time in s.
    pub t_coh: f64,
    /// Tolerated RMS range error in m.
    pub r_hat_max: f64,
    /// Propagation speed in m/s.
    pub speed_of_light: f64,
}

impl SensingScenario {
    pub fn reference() -> Self {
        Self {
            r_min: 18.0,
            r_max: 20.0,
            alpha: (-60.0_f64).to_radians(),
            sigma_rcs: 1.0,
            bandwidth: 10e6,
            noise_power: dbm_to_watts(-80.0),
            t_sen: 1e-3,
            t_coh: 1e-3,
            r_hat_max: 0.02,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        positive("r_min", self.r_min)?;
        positive("r_max", self.r_max)?;
        if self.r_min > self.r_max {
            return Err(SensingError::InvalidParameter {
                name: "r_min",
                value: self.r_min,
                reason: "must not exceed r_max",
            });
        }
        if !self.alpha.is_finite() {
            return Err(SensingError::InvalidParameter { name: "alpha", value: self.alpha, reason: "must be finite" });
        }
        positive("sigma_rcs", self.sigma_rcs)?;
        positive("bandwidth", self.bandwidth)?;
        positive("noise_power", self.noise_power)?;
        positive("t_sen", self.t_sen)?;
        positive("t_coh", self.t_coh)?;
        positive("r_hat_max", self.r_hat_max)?;
        positive("speed_of_light", self.speed_of_light)?;
        if self.t_sen > self.t_coh {
            return Err(SensingError::InvalidParameter {
                name: "t_sen",
                value: self.t_sen,
                reason: "sensing frame must fit in the coherence time",
            });
        }
        if slot_duration(tau_max(self), self) > self.t_sen {
            return Err(SensingError::InvalidParameter {
                name: "t_sen",
                value: self.t_sen,
                reason: "sensing frame shorter than one slot",
            });
        }
        Ok(())
    }
}

/// `P[W] = 10^((P[dBm] - 30) / 10)`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Array response toward `alpha`: `u_n = exp(-j 2 pi (spacing/lambda) sin(alpha) n)`.
pub fn steering_vector(geometry: &ArrayGeometry, alpha: f64) -> CVector {
    let phase = -2.0 * PI * geometry.spacing / geometry.wavelength * alpha.sin();
    CVector::from_fn(geometry.n_t, |n, _| Complex::from_polar(1.0, phase * n as f64))
}

/// Longest pulse, `2 R_min / c`.
pub fn tau_max(scenario: &SensingScenario) -> f64 {
    2.0 * scenario.r_min / scenario.speed_of_light
}

/// Slot length `2 R_max / c + tau`.
pub fn slot_duration(tau: f64, scenario: &SensingScenario) -> f64 {
    2.0 * scenario.r_max / scenario.speed_of_light + tau
}

/// Constants of the radar equation and the delay-error formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarConstants {
    /// Echo gain from a target at `R_max`, including the receive array gain.
    pub z1: f64,
    /// Noise per unit sensing frame, `sigma_n^2 / (4 T_sen)`, in W/s.
    pub z2: f64,
    /// Composite accuracy constant `c sqrt(z2) / (2 B sqrt(z1))`.
    pub z: f64,
}

pub fn radar_constants(scenario: &SensingScenario, geometry: &ArrayGeometry, u: &CVector) -> RadarConstants {
    let lambda = geometry.wavelength;
    let four_pi_cubed = (4.0 * PI).powi(3);
    let z1 = lambda * lambda * scenario.sigma_rcs * u.norm_squared() / (four_pi_cubed * scenario.r_max.powi(4));
    let z2 = scenario.noise_power / (4.0 * scenario.t_sen);
    let z = scenario.speed_of_light * z2.sqrt() / (2.0 * scenario.bandwidth * z1.sqrt());
    RadarConstants { z1, z2, z }
}

/// RMS range error for pulse `(tau, amplitude, beam)`.
pub fn range_rmse(
    tau: f64,
    amplitude: f64,
    beam: &CVector,
    constants: &RadarConstants,
    scenario: &SensingScenario,
    u: &CVector,
) -> Result<f64, SensingError> {
    positive("tau", tau)?;
    let echo = amplitude * amplitude * u.dotc(beam).norm_sqr();
    if echo == 0.0 {
        return Err(SensingError::UnboundedRmse);
    }
    let slot = slot_duration(tau, scenario);
    Ok(constants.z * slot / (tau * echo).sqrt())
}

/// Shortest pulse meeting the accuracy target with all of `p_p` steered at
/// the target. Fails when no real root exists or it exceeds [`tau_max`].
pub fn tau_min(
    scenario: &SensingScenario,
    geometry: &ArrayGeometry,
    constants: &RadarConstants,
    p_p: f64,
) -> Result<f64, SensingError> {
    positive("p_p", p_p)?;
    let array_gain = geometry.n_t as f64;
    let z3 = p_p * array_gain * scenario.r_hat_max.powi(2) / (constants.z * constants.z);
    let z4 = 4.0 * scenario.r_max / scenario.speed_of_light;
    let discriminant = z3 * z3 - 2.0 * z3 * z4;
    if discriminant < 0.0 {
        return Err(SensingError::NoRealRoot { discriminant });
    }
    // Smaller root of tau^2 + (z4 - z3) tau + z4^2/4 = 0, written via the
    // product of roots to avoid cancellation when z3 >> z4.
    let larger = 0.5 * (z3 - z4 + discriminant.sqrt());
    let tau = 0.25 * z4 * z4 / larger;
    let upper = tau_max(scenario);
    if tau > upper {
        return Err(SensingError::EmptyPulseWindow { tau_min: tau, tau_max: upper });
    }
    Ok(tau)
}

/// `n_tau` equally spaced pulse durations on `[tau_min, tau_max]`.
pub fn feasible_tau_grid(
    scenario: &SensingScenario,
    geometry: &ArrayGeometry,
    constants: &RadarConstants,
    p_p: f64,
    n_tau: usize,
) -> Result<Vec<f64>, SensingError> {
    if n_tau == 0 {
        return Err(SensingError::EmptyGrid);
    }
    let lo = tau_min(scenario, geometry, constants, p_p)?;
    let hi = tau_max(scenario);
    if n_tau == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n_tau - 1) as f64;
    Ok((0..n_tau).map(|k| if k + 1 == n_tau { hi } else { lo + step * k as f64 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SensingScenario, ArrayGeometry, CVector, RadarConstants) {
        let s = SensingScenario::reference();
        let g = ArrayGeometry::reference();
        let u = steering_vector(&g, s.alpha);
        let k = radar_constants(&s, &g, &u);
        (s, g, u, k)
    }

    /// Bisection on z^2 T(tau)^2 / (tau R^2) = P_p |u|^2 over (0, hi].
    /// The left side decreases in tau below the vertex at 2 R_max / c.
    fn tau_min_bisection(s: &SensingScenario, k: &RadarConstants, p_p: f64, n_t: f64) -> f64 {
        let target = p_p * n_t;
        let f = |t: f64| k.z * k.z * slot_duration(t, s).powi(2) / (t * s.r_hat_max.powi(2)) - target;
        let (mut lo, mut hi) = (1e-20, 2.0 * s.r_max / s.speed_of_light);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn steering_examples() {
        let g = ArrayGeometry::reference();
        let u0 = steering_vector(&g, 0.0);
        assert!(u0.iter().all(|c| (c - Complex::new(1.0, 0.0)).norm() < 1e-15));
        let single = steering_vector(&ArrayGeometry::new(1, 0.1, 0.2).unwrap(), 0.3);
        assert_eq!(single.len(), 1);
        assert!((single[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);
        let alpha = (-60.0_f64).to_radians();
        let u = steering_vector(&g, alpha);
        assert!((u.norm_squared() - 10.0).abs() < 1e-12);
        for (n, c) in u.iter().enumerate() {
            let expected = Complex::from_polar(1.0, -PI * alpha.sin() * n as f64);
            assert!((c - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn timing_examples() {
        let mut s = SensingScenario::reference();
        assert_eq!(tau_max(&s), 1.2e-7);
        s.r_min = 3.0;
        assert!((tau_max(&s) - 2.0e-8).abs() < 1e-22);
        s.r_min = 0.0;
        assert_eq!(tau_max(&s), 0.0);
        let s = SensingScenario::reference();
        assert!((slot_duration(0.0, &s) - 1.333_333_333_333_333_3e-7).abs() < 1e-20);
        let t = slot_duration(1.2e-7, &s);
        assert!((t - 2.533_333_333_333_333e-7).abs() < 1e-20);
        assert!((1.2e-7 / t - 0.4737).abs() < 1e-4);
        assert!((slot_duration(3.3e-8, &s) - slot_duration(0.0, &s) - 3.3e-8).abs() < 1e-22);
    }

    #[test]
    fn radar_constant_examples() {
        let (s, g, u, k) = setup();
        // 0.125^2 * 1 * 10 / ((4 pi)^3 20^4)
        assert!(((k.z1 - 4.921_193_608_581_465e-10) / k.z1).abs() < 1e-13);
        assert!((k.z2 - 2.5e-9).abs() < 1e-22);
        let mut s2 = s;
        s2.sigma_rcs = 2.0;
        let k2 = radar_constants(&s2, &g, &u);
        assert!((k2.z1 / k.z1 - 2.0).abs() < 1e-14);
        assert!((k2.z / k.z - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!((dbm_to_watts(-80.0) - 1e-11).abs() < 1e-26);
    }

    #[test]
    fn rmse_scaling_and_limits() {
        let (s, _, u, k) = setup();
        let w = &u / Complex::new(u.norm(), 0.0);
        let r1 = range_rmse(5e-8, 0.5, &w, &k, &s, &u).unwrap();
        let r2 = range_rmse(5e-8, 1.0, &w, &k, &s, &u).unwrap();
        assert!((r1 / r2 - 2.0).abs() < 1e-13);
        assert!(range_rmse(5e-8, 1e9, &w, &k, &s, &u).unwrap() < 1e-9);
        let mut orth = CVector::zeros(10);
        orth[0] = u[0];
        orth[1] = -u[1];
        let orth = &orth / Complex::new(orth.norm(), 0.0);
        assert_eq!(range_rmse(5e-8, 1.0, &orth, &k, &s, &u), Err(SensingError::UnboundedRmse));
    }

    #[test]
    fn tau_min_reference_value() {
        let (s, g, u, k) = setup();
        let t = tau_min(&s, &g, &k, 0.5).unwrap();
        // abscissa of the first published grid point
        assert!(((t - 1.208_545_892_330_17e-8) / t).abs() < 1e-12);
        let oracle = tau_min_bisection(&s, &k, 0.5, 10.0);
        assert!(((t - oracle) / oracle).abs() < 1e-12);
        let w = &u / Complex::new(u.norm(), 0.0);
        let r = range_rmse(t, 0.5f64.sqrt(), &w, &k, &s, &u).unwrap();
        assert!(((r - s.r_hat_max) / s.r_hat_max).abs() < 1e-9);
    }

    #[test]
    fn tau_min_boundary_and_infeasible() {
        let (mut s, g, _, k) = setup();
        let z4 = 4.0 * s.r_max / s.speed_of_light;
        // choose r_hat_max so that z3 = 2 z4 exactly
        let p_p = 0.5;
        s.r_hat_max = (2.0 * z4 * k.z * k.z / (p_p * 10.0)).sqrt() * (1.0 + 1e-15);
        // the double root z4/2 lies beyond tau_max for this geometry
        match tau_min(&s, &g, &k, p_p) {
            Err(SensingError::EmptyPulseWindow { tau_min: t, .. }) => assert!(((t - z4 / 2.0) / t).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
        s.r_hat_max = 0.01;
        assert!(matches!(tau_min(&s, &g, &k, p_p), Err(SensingError::NoRealRoot { .. })));
        let mut s = SensingScenario::reference();
        s.r_min = 0.5;
        assert!(matches!(tau_min(&s, &g, &k, p_p), Err(SensingError::EmptyPulseWindow { .. })));
    }

    #[test]
    fn inequality_chain_when_real() {
        let (s, g, _, k) = setup();
        for i in 0..200 {
            let p_p = 0.2 + 0.01 * i as f64;
            if tau_min(&s, &g, &k, p_p).is_err() {
                continue;
            }
            let z3 = p_p * 10.0 * s.r_hat_max.powi(2) / (k.z * k.z);
            let z4 = 4.0 * s.r_max / s.speed_of_light;
            assert!(z3 > z4);
            assert!(z3 - z4 > (z3 * z3 - 2.0 * z3 * z4).sqrt());
        }
    }

    #[test]
    fn tau_min_monotone_in_budget_and_accuracy() {
        let (s, g, _, k) = setup();
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let p_p = 0.3 + 0.05 * i as f64;
            let t = tau_min(&s, &g, &k, p_p).unwrap();
            let oracle = tau_min_bisection(&s, &k, p_p, 10.0);
            assert!(((t - oracle) / oracle).abs() < 1e-12);
            assert!(t < prev);
            prev = t;
        }
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let mut s2 = s;
            s2.r_hat_max = 0.015 + 0.001 * i as f64;
            let t = tau_min(&s2, &g, &k, 0.5).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn grid_examples() {
        let (s, g, _, k) = setup();
        let grid = feasible_tau_grid(&s, &g, &k, 0.5, 50).unwrap();
        assert_eq!(grid.len(), 50);
        assert_eq!(*grid.last().unwrap(), 1.2e-7);
        assert!(((grid[1] - grid[0]) - 2.202_337_572_993_84e-9).abs() < 1e-20);
        // second published abscissa
        assert!(((grid[1] - 1.428_779_649_629_56e-8) / grid[1]).abs() < 1e-12);
        let two = feasible_tau_grid(&s, &g, &k, 0.5, 2).unwrap();
        assert_eq!(two, vec![grid[0], 1.2e-7]);
        assert_eq!(feasible_tau_grid(&s, &g, &k, 0.5, 1).unwrap(), vec![grid[0]]);
        assert_eq!(feasible_tau_grid(&s, &g, &k, 0.5, 0), Err(SensingError::EmptyGrid));
    }

    #[test]
    fn echo_power_consistency() {
        // (tau/T) P_ST from z1 against a direct radar-equation evaluation.
        let (s, g, u, k) = setup();
        let tau = 7e-8;
        let slot = slot_duration(tau, &s);
        for seed in 0..20u32 {
            let w = CVector::from_fn(10, |n, _| {
                let t = (seed as f64 + 1.0) * (n as f64 + 0.5);
                Complex::new(t.sin(), (1.7 * t).cos())
            });
            let w = &w / Complex::new(w.norm(), 0.0);
            let a = 0.3 + 0.01 * seed as f64;
            let via_constants = tau / slot * a * a * u.dotc(&w).norm_sqr() * k.z1;
            let tx_gain = a * a * u.dotc(&w).norm_sqr();
            let direct = tau / slot * tx_gain * g.wavelength.powi(2) * s.sigma_rcs * g.n_t as f64
                / ((4.0 * PI).powi(3) * s.r_max.powi(4));
            assert!(((via_constants - direct) / direct).abs() < 1e-13);
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = SensingScenario::reference();
        assert!(s.validate().is_ok());
        s.r_min = 25.0;
        assert!(s.validate().is_err());
        let mut s = SensingScenario::reference();
        s.t_sen = 2e-3;
        assert!(s.validate().is_err());
        let mut s = SensingScenario::reference();
        s.r_min = -1.0;
        assert!(s.validate().is_err());
        assert!(ArrayGeometry::new(0, 0.1, 0.2).is_err());
    }
}
