//! Deformed star distributions and the diffeomorphisms built from them.

mod model;
mod radial;
mod scaling;
mod warp;

pub use model::{
    star_normalizer, NormalizerMethod, StarModel, DEFAULT_MC_SAMPLES, DEFAULT_QUADRATURE_POINTS,
    MAX_NORMALIZED_DIM,
};
pub use radial::{ConstantRadial, RadialFn};
pub use scaling::RadialScaling;
pub use warp::{RadialWarp, Warp};
