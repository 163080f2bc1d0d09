//! Data-free fitting of low-dimensional neural subspaces for physical systems.
//!
//! Given only a differentiable potential energy and a seed configuration, the
//! [`subspace_fit`] module trains an MLP `f: R^(d+m) -> R^n` whose image is a
//! diverse, low-energy family of configurations. The fitted maps can then be
//! sampled, stepped through time in latent space ([`latent_sim`]), keyframed
//! ([`spline`]), or compared against classical linear modes ([`modal`]).

pub mod error;
pub mod io;
pub mod latent_sim;
pub mod lbfgs;
pub mod mlp;
pub mod modal;
pub mod sampling;
pub mod spline;
pub mod subspace;
pub mod subspace_fit;
pub mod systems;

pub use error::{Error, Result};
pub use mlp::MlpParams;
pub use subspace::{AffineSubspace, SubspaceMap, SubspaceModel};
pub use subspace_fit::{TrainConfig, TrainTelemetry};
pub use systems::SystemDef;
