//! Active-learning surrogate constitutive modeling for nonlinear finite
//! element analysis.
//!
//! This library accelerates nonlinear (and concurrent multiscale, FE²-style)
//! finite element simulations by replacing the constitutive update at every
//! integration point with an online-trained surrogate,
//!
//! ```text
//! σ(ε) = D_e ε + E[σ̂(ε)],
//! ```
//!
//! where `D_e` is the initial elastic stiffness and `σ̂` is a stress
//! correction inferred by independent gradient-enhanced Gaussian-process
//! regressors, one per stress component. The GPs are trained *online* from a
//! small, adaptively chosen set of fully solved "anchor" material models that
//! follow the strain history of their integration points. The Bayesian
//! predictive variance doubles as an error indicator that drives sampling,
//! step cancellation, and hyperparameter retraining.
//!
//! # Modules
//!
//! * [`numerics`] — dense symmetric factorization with jitter escalation,
//!   BFGS minimization, and seeded k-means clustering.
//! * [`gp`] — zero-mean Gaussian-process regression with derivative
//!   observations under the squared exponential kernel, including marginal
//!   likelihood optimization.
//! * [`materials`] — full-order constitutive models with committed/trial
//!   history: linear elasticity, a pressure-dependent paraboloidal
//!   elastoplastic model, and a 1D elastoplastic reduction.
//! * [`fem`] — meshes, assembly, a Newton solver with constitutive lifecycle
//!   hooks (`materialUpdate → checkSolution → commit/cancel`), and an
//!   RVE-backed homogenized material for FE² analyses.
//! * [`surrogate`] — the active-learning wrapper tying everything together:
//!   anchor management, greedy data selection, uncertainty bookkeeping and
//!   the solver-facing hook implementations.

pub mod fem;
pub mod gp;
pub mod materials;
pub mod numerics;
pub mod surrogate;
