//! Riemannian archetypal analysis on pullback geometries of deformed star
//! distributions.
//!
//! The crate is organized bottom-up:
//!
//! * [`diffeo`] and [`geometry`]: invertible maps and the closed-form manifold
//!   maps of the Euclidean pullback metric they induce.
//! * [`star`] and [`ellipsoid`]: star-shaped densities, the radial scaling and
//!   norm warp diffeomorphisms, and ellipsoidal radial functions fitted to data.
//! * [`simplex`], [`ram`] and [`aa`]: archetypal projections and classical
//!   archetypal analysis in the latent space.
//! * [`flow`]: a constant-Jacobian additive coupling flow with hand-written
//!   reverse-mode gradients.
//! * [`io`], [`model`] and [`pipeline`]: file formats and the three-step fit.

pub mod aa;
pub mod diffeo;
pub mod ellipsoid;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod ram;
pub mod simplex;
pub mod star;
pub mod toy;

pub use diffeo::{Compose, Diffeo, Identity, LogDet, UniformScale, Vector};
pub use error::{Error, Result};
