//! uvforge: UV texture recovery on a synthetic parametric face world.
//!
//! The pipeline builds its own ground truth: a procedural blendshape head
//! with a fixed UV atlas is rendered into "photos", unwrapped back into
//! texture space through deliberately perturbed geometry, and the resulting
//! flawed partial textures train two conditional diffusion networks — an
//! appearance network (UV→2D) and a structure network (2D→UV). At inference
//! their conditioning modules are cross-assembled onto the shared denoiser
//! for UV→UV texture recovery, followed by Lab-space color matching.
//!
//! The numeric core is generic over the scalar type ([`scalar::Scalar`]);
//! the concrete aliases below pin the production precision.

pub mod assembly;
pub mod color;
pub mod corpus;
pub mod dataprep;
pub mod diffusion;
pub mod error;
pub mod evalrun;
pub mod geom;
pub mod img;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

/// Production scalar type: 32-bit floats everywhere.
pub type Real = f32;
/// Dense tensor at production precision.
pub type Tensor = tensor::Tensor<Real>;
/// Op tape at production precision.
pub type Graph = tensor::Graph<Real>;
