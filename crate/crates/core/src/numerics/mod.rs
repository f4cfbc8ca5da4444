//! Dense feedforward networks with explicit backprop, Adam, and probability helpers.

mod adam;
mod fd;
mod io;
mod mlp;
mod params;
pub mod prob;
pub mod rng;

pub use adam::{AdamConfig, AdamState};
pub use fd::finite_diff_grad;
pub use io::{read_params, write_params};
pub use mlp::{backward, backward_batch, forward, forward_batch, Activations};
pub use params::{Activation, LayerShape, MlpSpec, ParamVector};
