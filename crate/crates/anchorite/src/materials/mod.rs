//! Full-order constitutive models with committed/trial history.
//!
//! Three laws are provided: isotropic linear elasticity, the
//! pressure-dependent elastoplastic model of Melro et al. for epoxy matrices
//! (paraboloidal yield surface, non-associative flow), and a 1D elastoplastic
//! reduction for bar problems. All return the stress and the *consistent*
//! (algorithmic) tangent.
//!
//! History handling follows the two-phase protocol of the solver: `update`
//! computes a trial response from the committed state, `commit` promotes the
//! trial to committed history, `cancel` discards it. The implementation
//! style follows de Souza Neto, Perić & Owen, *Computational Methods for
//! Plasticity*.
//!
//! Voigt convention: stress and strain vectors use engineering shear
//! (γ = 2ε₁₂), ordered `(xx, yy, zz, xy, yz, zx)` in 3D and `(xx, yy, xy)`
//! for plane problems, so that `σ·ε` is the work density and consistent
//! tangents double as GP gradient observations without rescaling.

mod elastic;
mod hardening;
mod melro;
mod uniaxial;

pub use elastic::{elastic_matrix, elastic_update, ElasticMaterial, ElasticParams};
pub use hardening::HardeningCurve;
pub use melro::{
    melro_cancel, melro_commit, melro_elastic_plane_strain, melro_update, melro_update_3d,
    MelroParams, MelroPlaneStrain, PlasticState,
};
pub use uniaxial::{uniaxial_plastic_update, UniaxialPlastic, UniaxialState};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Analysis mode: fixes the strain/stress vector layout and the elastic
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisMode {
    /// 2D plane strain, components `(xx, yy, xy)`.
    PlaneStrain,
    /// 2D plane stress, components `(xx, yy, xy)`.
    PlaneStress,
    /// 1D bar, a single axial component.
    Uniaxial,
}

impl AnalysisMode {
    /// Number of strain/stress components carried by this mode.
    pub fn n_components(&self) -> usize {
        match self {
            AnalysisMode::PlaneStrain | AnalysisMode::PlaneStress => 3,
            AnalysisMode::Uniaxial => 1,
        }
    }
}

/// Errors raised by constitutive updates.
#[derive(Debug, Error)]
pub enum MaterialError {
    /// The local return-mapping Newton loop exceeded its iteration cap.
    #[error("plastic return mapping did not converge within {iterations} iterations")]
    ReturnMapDiverged { iterations: usize },
    /// The supplied strain vector has the wrong number of components.
    #[error("strain dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The strain contains NaN or infinity.
    #[error("non-finite strain component")]
    NonFinite,
    /// A nested micro-scale equilibrium solve failed to converge; the
    /// macro solver should cancel and re-attempt the step.
    #[error("micro-scale equilibrium solve diverged (residual {residual:.3e})")]
    MicroDiverged { residual: f64 },
}

/// Stress and consistent tangent returned by a constitutive update.
#[derive(Debug, Clone, PartialEq)]
pub struct StressTangent {
    /// Stress vector (Voigt, engineering-shear convention; MPa).
    pub stress: DVector<f64>,
    /// Consistent tangent dσ/dε (MPa).
    pub tangent: DMatrix<f64>,
}

/// A stateful constitutive point: trial updates against committed history,
/// with explicit commit/cancel, as driven by the nonlinear solver.
pub trait Material {
    /// Number of strain components expected by [`update`](Material::update).
    fn n_strain(&self) -> usize;

    /// Computes stress and consistent tangent at `eps` from the committed
    /// history, storing (but not committing) the trial state.
    fn update(&mut self, eps: &DVector<f64>) -> Result<StressTangent, MaterialError>;

    /// Promotes the trial state to committed history.
    fn commit(&mut self);

    /// Discards the trial state.
    fn cancel(&mut self);

    /// Committed equivalent plastic strain (0 for elastic laws). Used to
    /// detect plastic loading across a step.
    fn eps_p_eq(&self) -> f64;

    /// Equivalent plastic strain of the current trial, falling back to the
    /// committed value when no trial exists.
    fn trial_eps_p_eq(&self) -> f64;

    /// A new material of the same parameters with virgin (zero) history.
    fn clone_pristine(&self) -> Box<dyn Material>;
}
