//! Learning stable, interpretable ODE models from trajectory snapshots.
//!
//! The learned right-hand side follows a generalized Onsager structure,
//! `ḣ = −(M̃(h) + W̃(h))∇V(h) + f(h)` with a lower-bounded potential `V`, a
//! positive semi-definite dissipation `M̃` and a skew-symmetric `W̃`, which
//! guarantees a dissipative energy law for the learned model.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense matrices and a reverse-mode tape
//! - [`nets`]: MLPs, the OnsagerNet right-hand side and the MLP-ODEN baseline
//! - [`integrate`]: Heun and SSP-RK3 fixed-step integrators
//! - [`systems`]: benchmark dynamics and snapshot-pair datasets
//! - [`reduce`]: PCA and an isometry-regularised autoencoder
//! - [`train`]: losses, Adam/AMSGrad, the plateau schedule and the fit loop
//! - [`analysis`]: fixed points, periodic orbits, Lyapunov exponents, energy
//!   alignment and dissipation audits

pub mod analysis;
pub mod integrate;
pub mod nets;
pub mod reduce;
pub mod systems;
pub mod tensor;
pub mod train;

pub use integrate::VectorField;
pub use tensor::{Activation, Tape, Tensor, Var};
