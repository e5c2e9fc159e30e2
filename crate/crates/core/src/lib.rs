//! Joint transmit pulse and beamforming design for integrated sensing and
//! power transfer.
//!
//! A multi-antenna transceiver sends one rectangular pulse per slot. The same
//! pulse charges a set of rectenna receivers and ranges a radar target. This
//! crate picks the pulse duration, amplitude and beam that maximize the
//! weighted slot-average harvested power while the target's RMS range error
//! stays below a tolerance.
//!
//! Modules, bottom up:
//!
//! - [`special`]: log-domain Lambert-W and Bessel kernels.
//! - [`eh`]: the non-linear rectenna model and its derivative.
//! - [`sensing`]: steering vectors, slot timing, range accuracy, pulse bounds.
//! - [`channel`]: seeded Rician channels with free-space path loss.
//! - [`sdp`]: interior-point solver for the convex inner problem.
//! - [`sca`]: successive convex approximation at fixed pulse duration plus
//!   the outer grid search.
//! - [`baseline`]: energy beamforming mixed with beamsteering, for comparison.

pub mod baseline;
pub mod channel;
pub mod eh;
pub mod linalg;
pub mod sca;
pub mod sdp;
pub mod sensing;
pub mod special;

pub use nalgebra::Complex;

/// Complex column vector.
pub type CVector = nalgebra::DVector<Complex<f64>>;
/// Dense complex matrix; Hermitian wherever the API says so.
pub type CMatrix = nalgebra::DMatrix<Complex<f64>>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/harvesting.md")]
    mod harvesting {}
    #[doc = include_str!("../../../book/src/sensing.md")]
    mod sensing {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/sdp.md")]
    mod sdp {}
    #[doc = include_str!("../../../book/src/sca.md")]
    mod sca {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
}
