//! Circuit-based non-linear energy-harvesting model.
//!
//! A rectenna driven with input power `p` delivers
//!
//! ```text
//! phi(p) = [ W0(a e^a I0(C sqrt(2p))) / a - 1 ]^2 * Is^2 * RL
//! ```
//!
//! to its load. `phi` is smooth, increasing and (for the parameter ranges of
//! interest) convex on `[0, p_max]`; driving the diode past `p_max` is not
//! allowed, so every evaluation rejects inputs above it.
//!
//! Internally the Lambert-W term is carried as the excess `d = W0(.) - a`,
//! which solves `d + ln(1 + d/a) = ln I0(x)`. Working with `d` keeps full
//! relative precision at microwatt and nanowatt inputs where `W0(.)` is
//! within rounding of `a`.

use thiserror::Error;

use crate::special::{bessel_i1_over_i0, lambert_w0_of_exp, log_bessel_i0, LogDomainValue, SpecialFunctionError};
use crate::CVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EhError {
    #[error("invalid circuit parameter {name} = {value}: must be positive and finite")]
    InvalidCircuit { name: &'static str, value: f64 },
    #[error("input power {p_in} W outside [0, {p_max}] W")]
    InputPowerOutOfRange { p_in: f64, p_max: f64 },
    #[error("derivative requires a positive input power, got {0} W")]
    NonPositiveInputPower(f64),
    #[error("dimension mismatch: beam has {beam} entries, channel has {channel}")]
    DimensionMismatch { beam: usize, channel: usize },
    #[error("beamforming vector must have unit norm, got {0}")]
    BeamNotNormalized(f64),
    #[error("invalid receiver weights: {0}")]
    InvalidWeights(String),
    #[error("pulse duration {tau} s must lie in (0, {slot}) s")]
    InvalidDutyCycle { tau: f64, slot: f64 },
    #[error(transparent)]
    Special(#[from] SpecialFunctionError),
}

/// Rectenna circuit constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhCircuit {
    /// Dimensionless circuit constant.
    pub a: f64,
    /// Circuit constant in 1/sqrt(W).
    pub c: f64,
    /// Diode reverse saturation current in A.
    pub i_s: f64,
    /// Load resistance in ohm.
    pub r_l: f64,
    /// Largest admissible input power in W.
    pub p_max: f64,
}

impl EhCircuit {
    pub fn new(a: f64, c: f64, i_s: f64, r_l: f64, p_max: f64) -> Result<Self, EhError> {
        let circuit = Self { a, c, i_s, r_l, p_max };
        circuit.validate()?;
        Ok(circuit)
    }

    /// The Schottky rectenna used throughout the reference scenario.
    pub fn reference() -> Self {
        Self { a: 1.29, c: 1.55e3, i_s: 5e-6, r_l: 1e4, p_max: 25e-6 }
    }

    pub fn validate(&self) -> Result<(), EhError> {
        for (name, value) in [("a", self.a), ("C", self.c), ("I_s", self.i_s), ("R_L", self.r_l), ("P_max", self.p_max)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(EhError::InvalidCircuit { name, value });
            }
        }
        Ok(())
    }

    fn load_scale(&self) -> f64 {
        self.i_s * self.i_s * self.r_l
    }

    fn check_input(&self, p_in: f64) -> Result<(), EhError> {
        if !(0.0..=self.p_max).contains(&p_in) {
            return Err(EhError::InputPowerOutOfRange { p_in, p_max: self.p_max });
        }
        Ok(())
    }

    /// Returns `(d, x)` with `d = W0(a e^a I0(x)) - a` and `x = C sqrt(2 p_in)`.
    fn lambert_excess(&self, p_in: f64) -> Result<(f64, f64), EhError> {
        let a = self.a;
        let x = self.c * (2.0 * p_in).sqrt();
        let ell = log_bessel_i0(x)?;
        let log_arg = LogDomainValue::new(a.ln() + a + ell)?;
        let mut d = lambert_w0_of_exp(log_arg) - a;
        for _ in 0..3 {
            let g = d + (d / a).ln_1p() - ell;
            let step = g / (1.0 + 1.0 / (a + d));
            d -= step;
            if step.abs() <= f64::EPSILON * d.abs() {
                break;
            }
        }
        Ok((d.max(0.0), x))
    }
}

/// Harvested DC power for an input power `p_in` in `[0, p_max]`.
pub fn harvested_power_phi(p_in: f64, circuit: &EhCircuit) -> Result<f64, EhError> {
    circuit.check_input(p_in)?;
    if p_in == 0.0 {
        return Ok(0.0);
    }
    let (d, _) = circuit.lambert_excess(p_in)?;
    let ratio = d / circuit.a;
    Ok(ratio * ratio * circuit.load_scale())
}

/// `d phi / d p_in`, defined for `p_in` in `(0, p_max]`.
pub fn harvested_power_phi_prime(p_in: f64, circuit: &EhCircuit) -> Result<f64, EhError> {
    if p_in.is_nan() || p_in <= 0.0 {
        return Err(EhError::NonPositiveInputPower(p_in));
    }
    circuit.check_input(p_in)?;
    let a = circuit.a;
    let (d, x) = circuit.lambert_excess(p_in)?;
    // d ln I0(x) / dp = (I1/I0)(x) * C^2 / x
    let dell_dp = bessel_i1_over_i0(x)? / x * circuit.c * circuit.c;
    let dd_dp = dell_dp * (a + d) / (a + d + 1.0);
    Ok(2.0 * d / (a * a) * circuit.load_scale() * dd_dp)
}

/// `phi(min(p, p_max))`: the saturating curve, for plotting beyond `p_max`.
pub fn harvested_power_clipped(p_in: f64, circuit: &EhCircuit) -> Result<f64, EhError> {
    if p_in.is_nan() || p_in < 0.0 {
        return Err(EhError::InputPowerOutOfRange { p_in, p_max: circuit.p_max });
    }
    harvested_power_phi(p_in.min(circuit.p_max), circuit)
}

/// Peak received power `A^2 |h^H w|^2` at a receiver.
pub fn received_power(amplitude: f64, beam: &CVector, channel: &CVector) -> Result<f64, EhError> {
    if beam.len() != channel.len() {
        return Err(EhError::DimensionMismatch { beam: beam.len(), channel: channel.len() });
    }
    let norm = beam.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(EhError::BeamNotNormalized(norm));
    }
    Ok(amplitude * amplitude * channel.dotc(beam).norm_sqr())
}

/// The harvesting receivers: one circuit and one weight per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EhReceiverSet {
    circuits: Vec<EhCircuit>,
    weights: Vec<f64>,
}

impl EhReceiverSet {
    pub fn new(circuits: Vec<EhCircuit>, weights: Vec<f64>) -> Result<Self, EhError> {
        if circuits.is_empty() {
            return Err(EhError::InvalidWeights("at least one receiver is required".into()));
        }
        if circuits.len() != weights.len() {
            return Err(EhError::InvalidWeights(format!(
                "{} circuits but {} weights",
                circuits.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(EhError::InvalidWeights(format!("weight {w} outside [0, 1]")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(EhError::InvalidWeights(format!("weights sum to {total}, expected 1")));
        }
        for c in &circuits {
            c.validate()?;
        }
        Ok(Self { circuits, weights })
    }

    /// `m` identical receivers with weight `1/m` each.
    pub fn uniform(circuit: EhCircuit, m: usize) -> Result<Self, EhError> {
        Self::new(vec![circuit; m], vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }

    pub fn circuits(&self) -> &[EhCircuit] {
        &self.circuits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted sum of slot-averaged harvested powers, `(tau/slot) sum_m beta_m phi(p_m)`.
pub fn weighted_avg_harvested(
    tau: f64,
    slot: f64,
    receivers: &EhReceiverSet,
    p_in_list: &[f64],
) -> Result<f64, EhError> {
    if !(tau > 0.0 && tau < slot) {
        return Err(EhError::InvalidDutyCycle { tau, slot });
    }
    if p_in_list.len() != receivers.len() {
        return Err(EhError::DimensionMismatch { beam: p_in_list.len(), channel: receivers.len() });
    }
    let mut total = 0.0;
    for ((circuit, beta), &p) in receivers.circuits.iter().zip(&receivers.weights).zip(p_in_list) {
        total += beta * harvested_power_phi(p, circuit)?;
    }
    Ok(tau / slot * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use proptest::prelude::*;

    fn reference() -> EhCircuit {
        EhCircuit::reference()
    }

    #[test]
    fn phi_zero_is_exact() {
        assert_eq!(harvested_power_phi(0.0, &reference()).unwrap(), 0.0);
        // continuity from above
        assert!(harvested_power_phi(1e-15, &reference()).unwrap() < 1e-15);
    }

    #[test]
    fn phi_matches_extended_precision_oracle() {
        // 50-digit values from series I0 composed with bisection W0.
        let cases = [
            (25e-6, 7.353_191_743_079_691e-6),
            (5e-6, 7.382_481_177_130_034e-7),
            (1e-6, 5.163_031_975_013_081e-8),
            (1e-7, 6.635_933_664_813_421e-10),
            (1e-9, 6.876_612_181_384_62e-14),
        ];
        for (p, expected) in cases {
            let got = harvested_power_phi(p, &reference()).unwrap();
            assert!(((got - expected) / expected).abs() < 1e-8, "p={p}: {got} vs {expected}");
        }
        let at_1uw = harvested_power_phi(1e-6, &reference()).unwrap();
        assert!(at_1uw > 0.0 && at_1uw < harvested_power_phi(25e-6, &reference()).unwrap());
    }

    #[test]
    fn phi_rejects_out_of_range() {
        let c = reference();
        assert!(matches!(harvested_power_phi(-1e-12, &c), Err(EhError::InputPowerOutOfRange { .. })));
        assert!(matches!(harvested_power_phi(25.1e-6, &c), Err(EhError::InputPowerOutOfRange { .. })));
        assert!(harvested_power_phi(f64::NAN, &c).is_err());
        assert!(matches!(harvested_power_phi_prime(0.0, &c), Err(EhError::NonPositiveInputPower(_))));
        assert!(harvested_power_phi_prime(26e-6, &c).is_err());
    }

    #[test]
    fn clipped_saturates() {
        let c = reference();
        let top = harvested_power_phi(c.p_max, &c).unwrap();
        assert_eq!(harvested_power_clipped(1e-3, &c).unwrap(), top);
        assert_eq!(harvested_power_clipped(1e-6, &c).unwrap(), harvested_power_phi(1e-6, &c).unwrap());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let c = reference();
        let n = 200;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let p = 1e-9 * (2.5e-5_f64 / 1e-9).powf(t);
            let delta = 1e-6 * p;
            let hi = (p + delta).min(c.p_max);
            let fd = (harvested_power_phi(hi, &c).unwrap() - harvested_power_phi(p - delta, &c).unwrap())
                / (hi - (p - delta));
            let d = harvested_power_phi_prime(p, &c).unwrap();
            assert!(d > 0.0);
            assert!(((d - fd) / d).abs() <= 1e-5, "p={p}: analytic {d} fd {fd}");
        }
    }

    #[test]
    fn derivative_at_endpoint_one_sided() {
        let c = reference();
        let p = c.p_max;
        let h = 1e-7 * p;
        let fd = (3.0 * harvested_power_phi(p, &c).unwrap() - 4.0 * harvested_power_phi(p - h, &c).unwrap()
            + harvested_power_phi(p - 2.0 * h, &c).unwrap())
            / (2.0 * h);
        let d = harvested_power_phi_prime(p, &c).unwrap();
        assert!(d > 0.0);
        assert!(((d - fd) / d).abs() < 1e-5);
    }

    #[test]
    fn phi_is_convex_on_admissible_range() {
        // The linearization used by the optimizer is a minorizer exactly when
        // this holds.
        let c = reference();
        let mut prev = harvested_power_phi_prime(1e-12, &c).unwrap();
        for i in 1..=500 {
            let p = c.p_max * i as f64 / 500.0;
            let d = harvested_power_phi_prime(p, &c).unwrap();
            assert!(d > prev, "phi' not increasing at {p}");
            prev = d;
        }
    }

    #[test]
    fn received_power_examples() {
        let h = CVector::from_vec(vec![Complex::new(1.0, 2.0), Complex::new(-0.5, 0.25)]);
        let w = CVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        assert_eq!(received_power(0.0, &w, &h).unwrap(), 0.0);
        let matched = &h / Complex::new(h.norm(), 0.0);
        assert!((received_power(1.0, &matched, &h).unwrap() - h.norm_squared()).abs() < 1e-14);
        let orth = CVector::from_vec(vec![Complex::new(0.0, 0.0), Complex::new(0.0, 1.0)]);
        let h1 = CVector::from_vec(vec![Complex::new(3.0, 0.0), Complex::new(0.0, 0.0)]);
        assert_eq!(received_power(2.0, &orth, &h1).unwrap(), 0.0);
        assert!(matches!(
            received_power(1.0, &CVector::from_element(3, Complex::new(1.0, 0.0)), &h),
            Err(EhError::DimensionMismatch { .. })
        ));
        assert!(matches!(received_power(1.0, &h, &h), Err(EhError::BeamNotNormalized(_))));
    }

    #[test]
    fn weighted_average_examples() {
        let c = reference();
        let one = EhReceiverSet::uniform(c, 1).unwrap();
        assert_eq!(weighted_avg_harvested(0.5, 1.0, &one, &[0.0]).unwrap(), 0.0);
        let three = EhReceiverSet::uniform(c, 3).unwrap();
        let p = 3e-6;
        let v = weighted_avg_harvested(0.2, 1.0, &three, &[p, p, p]).unwrap();
        assert!((v - 0.2 * harvested_power_phi(p, &c).unwrap()).abs() < 1e-20);
        let tiny = weighted_avg_harvested(1e-12, 1.0, &three, &[p, p, p]).unwrap();
        assert!(tiny < 1e-17);
        assert!(weighted_avg_harvested(0.0, 1.0, &three, &[p, p, p]).is_err());
        assert!(weighted_avg_harvested(1.0, 1.0, &three, &[p, p, p]).is_err());
        assert!(weighted_avg_harvested(0.5, 1.0, &three, &[p, p]).is_err());
        assert!(weighted_avg_harvested(0.5, 1.0, &three, &[p, p, 1.0]).is_err());
    }

    #[test]
    fn receiver_set_validation() {
        let c = reference();
        assert!(EhReceiverSet::new(vec![], vec![]).is_err());
        assert!(EhReceiverSet::new(vec![c, c], vec![0.5]).is_err());
        assert!(EhReceiverSet::new(vec![c, c], vec![0.7, 0.7]).is_err());
        assert!(EhReceiverSet::new(vec![c, c], vec![1.2, -0.2]).is_err());
        assert!(EhReceiverSet::new(vec![c, c], vec![0.25, 0.75]).is_ok());
        assert!(EhCircuit::new(1.29, 0.0, 5e-6, 1e4, 25e-6).is_err());
    }

    proptest! {
        #[test]
        fn phi_strictly_increasing(p1 in 0.0..25e-6_f64, p2 in 0.0..25e-6_f64) {
            prop_assume!((p1 - p2).abs() > 1e-12);
            let c = reference();
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(harvested_power_phi(lo, &c).unwrap() < harvested_power_phi(hi, &c).unwrap());
        }

        #[test]
        fn weighted_average_is_linear(
            w0 in 0.0..1.0_f64,
            p in proptest::collection::vec(0.0..25e-6_f64, 2),
            tau in 0.01..0.9_f64,
        ) {
            let c = reference();
            let set = EhReceiverSet::new(vec![c, c], vec![w0, 1.0 - w0]).unwrap();
            let e0 = EhReceiverSet::new(vec![c, c], vec![1.0, 0.0]).unwrap();
            let e1 = EhReceiverSet::new(vec![c, c], vec![0.0, 1.0]).unwrap();
            let mixed = weighted_avg_harvested(tau, 1.0, &set, &p).unwrap();
            let split = w0 * weighted_avg_harvested(tau, 1.0, &e0, &p).unwrap()
                + (1.0 - w0) * weighted_avg_harvested(tau, 1.0, &e1, &p).unwrap();
            prop_assert!((mixed - split).abs() <= 1e-12 * mixed.abs().max(1e-30));
            let half = weighted_avg_harvested(tau / 2.0, 1.0, &set, &p).unwrap();
            prop_assert!((2.0 * half - mixed).abs() <= 1e-12 * mixed.abs().max(1e-30));
        }
    }
}
