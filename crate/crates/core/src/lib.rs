//! Compressive-sensing acoustic beamforming.
//!
//! The crate turns microphone-array observations into source-power maps with
//! three imaging algorithms: the conventional beamformer ([`beamformers::cb`]),
//! CSB-I, which solves a basis-pursuit-denoising problem directly on a
//! frequency-domain snapshot ([`beamformers::csb1`]), and CSB-II, which solves
//! a nonnegative problem on the vectorized cross-spectral matrix through the
//! lifted steering matrix ([`beamformers::csb2`]).
//!
//! ```
//! use csbeam::geometry::{make_grid, spiral_array, Extent};
//! use csbeam::wave_model::{steering_matrix, DEFAULT_SPEED_OF_SOUND};
//!
//! let array = spiral_array(56, 7, 0.5).unwrap();
//! let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 21, 21, 1.0).unwrap();
//! let g = steering_matrix(&array, &grid, 5000.0, DEFAULT_SPEED_OF_SOUND).unwrap();
//! assert_eq!((g.sensors(), g.points()), (56, 441));
//! ```

// Checks like `!(x >= min)` are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamformers;
pub mod error;
pub mod geometry;
pub mod imaging_metrics;
pub mod io;
pub mod signal_sim;
pub mod sparse_solver;
pub mod wave_model;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/wave-model.md")]
    mod wave_model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/beamformers.md")]
    mod beamformers {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
