//! Small nonlinear finite element kernel with a constitutive hook
//! lifecycle.
//!
//! The solver advances prescribed displacement and load histories in
//! pseudo-time steps.  Each step runs a Newton equilibrium search
//! (Zienkiewicz & Taylor, The Finite Element Method, 7th ed., ch. 2–3;
//! de Souza Neto, Perić & Owen, Computational Methods for Plasticity,
//! ch. 4), but every constitutive evaluation and every converged state is
//! routed through a [`ConstitutiveHooks`] implementation.  The hooks can
//! accept a converged solution, demand another search at the same load
//! level, restart the step, or cancel it outright — which is exactly the
//! protocol an adaptively trained constitutive model needs to interleave
//! data collection with the analysis it serves.
//!
//! Submodules:
//!
//! * [`mesh`](self) — plain-text mesh format, parsing and validation;
//! * elements — integration-point tables for bar, triangle and
//!   quadrilateral elements, and the tapered bar section;
//! * linsys — dense and banded symmetric-profile linear solvers;
//! * [`solver`](self) — the hook-driven incremental Newton solver;
//! * [`meshgen`] — parametric mesh families (tapered bar, unit cell,
//!   perforated plate);
//! * [`rve`] — periodic homogenization of a representative volume
//!   element, usable as a macro-scale material.

use thiserror::Error;

use crate::materials::MaterialError;

mod elements;
mod linsys;
mod mesh;
mod solver;

pub mod meshgen;
pub mod rve;

pub use elements::{BarSection, TAPERED_BAR_LENGTH};
pub use linsys::{StiffnessFactor, StiffnessMatrix};
pub use mesh::{format_mesh, load_mesh, parse_mesh, write_mesh, Element, ElementType, Mesh};
pub use solver::{
    Assembled, ConstitutiveHooks, FemModel, FullOrderHooks, PrescribedDisplacement,
    PrescribedLoad, SolverConfig, StepOutcome, Strategy, Verdict,
};

/// Errors raised by meshing, assembly and the incremental solver.
#[derive(Debug, Error)]
pub enum FemError {
    /// A mesh file failed to parse; `line` is 1-based (0 for file-level
    /// problems).
    #[error("mesh parse error at line {line}: {message}")]
    Parse {
        /// 1-based source line of the offending token.
        line: usize,
        /// What went wrong.
        message: String,
    },

    /// An element has inverted or degenerate geometry.
    #[error("invalid element {element}: {message}")]
    InvalidElement {
        /// Element index.
        element: usize,
        /// What the geometry check found.
        message: String,
    },

    /// Inconsistent model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A named node group does not exist in the mesh.
    #[error("unknown node group '{0}'")]
    UnknownGroup(String),

    /// A unit cell could not be paired periodically.
    #[error("periodicity error: {0}")]
    Periodicity(String),

    /// A constitutive hook failed fatally.
    #[error(transparent)]
    Hook(#[from] HookError),

    /// The linear solver hit a singular or ill-posed system.
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// A step exhausted its cancel budget without converging.
    #[error("step {step} failed after {cancels} cancelled attempts")]
    StepFailed {
        /// Zero-based index of the failed step.
        step: usize,
        /// Number of cancelled attempts.
        cancels: usize,
    },

    /// Mesh file I/O failed.
    #[error("mesh i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised by [`ConstitutiveHooks`] implementations.
///
/// Cancellation requests and diverged return maps or micro solves are
/// step-cancel signals (the solver backtracks and retries); everything
/// else aborts the analysis.
#[derive(Debug, Error)]
pub enum HookError {
    /// A constitutive update failed at an integration point.
    #[error("material update failed at point {point}: {source}")]
    Material {
        /// Integration point index.
        point: usize,
        /// Underlying constitutive failure.
        #[source]
        source: MaterialError,
    },

    /// The model asked for the running step to be cancelled.
    #[error("step cancel requested at point {point} (uncertainty {gamma:.6})")]
    CancelRequested {
        /// Integration point that triggered the request.
        point: usize,
        /// Uncertainty measure that crossed the cancel threshold.
        gamma: f64,
    },

    /// Unrecoverable hook failure.
    #[error("constitutive hook failed: {0}")]
    Failed(String),
}
