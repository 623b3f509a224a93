//! Gradient Gibbs fields on the discrete torus whose potential is a
//! log-mixture of Gaussians, `V(s) = -log ∫ ϱ(dκ) exp(-κ s²/2)`.
//!
//! The extended description of such a field carries an auxiliary conductance
//! κ on every edge: given the gradients the conductances are an independent
//! product over edges, and given the conductances the heights are a centered
//! Gaussian with precision operator `-L_κ`.  Everything in this crate hangs
//! off that pair of conditionals:
//!
//! * [`potential`] — atomic mixtures, the potential, and the per-edge
//!   conductance posterior;
//! * [`lattice`] — torus indexing, height/gradient/conductance containers;
//! * [`operator`] — the conductance Laplacian, solvers, and heat semigroup;
//! * [`sampler`] — the alternating Gibbs chain for (heights, conductances);
//! * [`walk`] — the variable-speed random walk among the conductances and
//!   its annealed diffusivity/heat-kernel estimators;
//! * [`homogenize`] — correctors, harmonic coordinates, and the effective
//!   diffusivity matrix;
//! * [`scaling`] — continuum test functions and the Gaussian-limit checks
//!   tying the pieces together.

pub mod ensemble;
pub mod error;
pub mod fourier;
pub mod homogenize;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod operator;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod sampler;
pub mod scaling;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
