//! Fully-connected encoder/decoder networks and the Adam optimizer.

mod adam;
mod mlp;
mod vae;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use mlp::{BoundMlp, Linear, Mlp, MlpSpec};
pub use vae::{
    reparameterize, reparameterize_with, BoundVae, GaussianLatent, VaeModel, LOGVAR_MAX,
    LOGVAR_MIN,
};
