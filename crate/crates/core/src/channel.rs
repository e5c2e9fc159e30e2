//! Seeded Rician channels between the transceiver array and the harvesting
//! nodes.
//!
//! Node `m` at distance `R` and angle `theta` sees
//!
//! ```text
//! h = sqrt(L(R)) * ( sqrt(k/(1+k)) u(theta) + sqrt(1/(1+k)) g ),   L(R) = lambda^2 / (4 pi R)^2
//! ```
//!
//! with `u(theta)` the array steering vector and `g` i.i.d. CN(0, 1).
//!
//! # Random numbers
//!
//! Every draw comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)`; node `m` reads its own stream, selected with
//! `set_stream(m)`, so nodes never share key-stream blocks. Uniforms are
//! `(next_u64 >> 11) * 2^-53` and complex Gaussians use Box-Muller:
//! `sqrt(-ln(1 - u1)) * exp(j 2 pi u2)`, consuming two uniforms per entry in
//! antenna order. A realization with index `r` in a Monte-Carlo run uses
//! `seed = base_seed + r`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Complex;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::sensing::{steering_vector, ArrayGeometry};
use crate::CVector;

/// Position and weight of one harvesting node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhNodePlacement {
    /// Distance from the array in m.
    pub distance: f64,
    /// Direction in rad.
    pub angle: f64,
    pub weight: f64,
}

impl EhNodePlacement {
    /// Three equally weighted nodes at 5 m, 45/60/75 degrees.
    pub fn reference_layout() -> Vec<Self> {
        [45.0_f64, 60.0, 75.0]
            .iter()
            .map(|deg| Self { distance: 5.0, angle: deg.to_radians(), weight: 1.0 / 3.0 })
            .collect()
    }
}

/// Free-space path loss `lambda^2 / (4 pi R)^2`.
pub fn path_loss(wavelength: f64, distance: f64) -> f64 {
    let ratio = wavelength / (4.0 * PI * distance);
    ratio * ratio
}

fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn complex_gaussian(rng: &mut ChaCha20Rng) -> Complex<f64> {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    Complex::from_polar((-(1.0 - u1).ln()).sqrt(), 2.0 * PI * u2)
}

/// Splits a K-factor into line-of-sight and scattered amplitude weights.
fn rician_weights(k_factor: f64) -> (f64, f64) {
    if k_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_factor / (1.0 + k_factor)).sqrt(), (1.0 / (1.0 + k_factor)).sqrt())
    }
}

/// One node's channel, drawn from stream `stream` of generator `seed`.
pub fn rician_channel(
    seed: u64,
    stream: u64,
    placement: &EhNodePlacement,
    geometry: &ArrayGeometry,
    k_factor: f64,
) -> CVector {
    assert!(k_factor >= 0.0, "K-factor must be non-negative");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (los, nlos) = rician_weights(k_factor);
    let gain = path_loss(geometry.wavelength, placement.distance).sqrt();
    let u = steering_vector(geometry, placement.angle);
    CVector::from_fn(geometry.n_t, |n, _| {
        let g = complex_gaussian(&mut rng);
        (u[n] * los + g * nlos) * gain
    })
}

/// The channels of all nodes for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub vectors: Vec<CVector>,
    pub placements: Vec<EhNodePlacement>,
    pub seed: u64,
}

impl ChannelSet {
    pub fn generate(seed: u64, placements: &[EhNodePlacement], geometry: &ArrayGeometry, k_factor: f64) -> Self {
        let vectors = placements
            .iter()
            .enumerate()
            .map(|(m, p)| rician_channel(seed, m as u64, p, geometry, k_factor))
            .collect();
        Self { vectors, placements: placements.to_vec(), seed }
    }

    /// Wraps explicitly given channel vectors.
    pub fn from_vectors(vectors: Vec<CVector>, placements: Vec<EhNodePlacement>) -> Self {
        Self { vectors, placements, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Writes `m,n,re,im` rows, one per channel coefficient.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# channel seed {}", self.seed)?;
        writeln!(out, "m,n,re,im")?;
        for (m, h) in self.vectors.iter().enumerate() {
            for (n, c) in h.iter().enumerate() {
                writeln!(out, "{m},{n},{},{}", c.re, c.im)?;
            }
        }
        Ok(())
    }
}
