//! Policy-gradient training under mutual-information privacy constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] dense MLPs with hand-written backprop, Adam, probability helpers
//! * [`mdp`] factored-state episodic MDPs, rollouts and the exact enumeration oracle
//! * [`envs`] the VPN, 2-D particle, customer-service and SNAP environments
//! * [`mi`] plug-in, discriminator and KDE estimators of action/sensitive-state MI
//! * [`grad`] REINFORCE with baseline, the model-based per-timestep MI gradient and
//!   the model-free trajectory MI gradient
//! * [`trainer`] the Lagrangian training loop, checkpoints and metrics
//! * [`audit`] evaluation and export of trained checkpoints
//!
//! Batch work (rollouts, per-trajectory gradient terms) runs on rayon when the
//! `parallel` feature is enabled and sequentially otherwise. Results are identical
//! either way: every trajectory owns a random stream derived from the run seed and
//! reductions run over ordered buffers.

pub mod audit;
pub mod envs;
pub mod error;
pub mod grad;
pub mod mdp;
pub mod mi;
pub mod numerics;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
