//! Adversarial measurements for machine-learning detectors in cyber-physical
//! systems, subject to the physical linear laws the measurements obey.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: row reduction, rank, null-space dependency split, weighted
//!   least squares.
//! * [`nn`]: small fully-connected classifiers with exact input gradients.
//! * [`constraints`]: equality and inequality constraint sets over the
//!   compromised sensors.
//! * [`attack`]: the constrained searches and the universal search over
//!   unknown readings.
//! * [`powergrid`] and [`water`]: the two case studies.
//! * [`harness`]: end-to-end scenario runs and reports.
//!
//! ```
//! use physadv::constraints::{ConstraintKind, ConstraintSet};
//! use physadv::linalg::{dependency, Matrix, DEFAULT_PIVOT_TOL};
//!
//! // Meter 0 reads the sum of meters 1 and 2.
//! let phi = Matrix::from_rows(&[[1.0, -1.0, -1.0]]).unwrap();
//! let dep = dependency(&phi, DEFAULT_PIVOT_TOL).unwrap();
//! assert_eq!(dep.dependent, vec![0]);
//! assert_eq!(dep.independent, vec![1, 2]);
//!
//! let cs = ConstraintSet::new(phi, vec![0.0], ConstraintKind::Equality, vec![0, 1, 2]).unwrap();
//! let basis = dep.null_space_basis();
//! for k in 0..basis.cols() {
//!     assert!(cs.validate_perturbation(&basis.column(k), 1e-12).unwrap());
//! }
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod constraints;
mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod powergrid;
pub mod water;

pub use error::{Error, Result};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/null-space.md")]
    mod null_space {}
    #[doc = include_str!("../../../book/src/equality-search.md")]
    mod equality_search {}
    #[doc = include_str!("../../../book/src/inequality-search.md")]
    mod inequality_search {}
    #[doc = include_str!("../../../book/src/universal.md")]
    mod universal {}
    #[doc = include_str!("../../../book/src/power-grid.md")]
    mod power_grid {}
    #[doc = include_str!("../../../book/src/water.md")]
    mod water {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
