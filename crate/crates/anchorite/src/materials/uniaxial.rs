//! 1D elastoplasticity with the symmetric yield condition |σ| = σ_t(ε_p_eq),
//! used for bar problems where the constitutive space is two-dimensional
//! (one strain, one history variable).

use nalgebra::{DMatrix, DVector};

use super::{HardeningCurve, Material, MaterialError, StressTangent};

/// Iteration cap for the hardening-consistency Newton loop.
const MAX_ITER: usize = 50;
/// Relative tolerance on the yield residual.
const TOL: f64 = 1e-12;

/// Committed/trial plastic history of a 1D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniaxialState {
    committed: (f64, f64),
    trial: Option<(f64, f64)>,
}

impl UniaxialState {
    /// A virgin state with zero plastic strain.
    pub fn new() -> Self {
        Self { committed: (0.0, 0.0), trial: None }
    }

    /// Committed plastic strain.
    pub fn eps_p(&self) -> f64 {
        self.committed.0
    }

    /// Committed equivalent plastic strain.
    pub fn eps_p_eq(&self) -> f64 {
        self.committed.1
    }

    /// Trial equivalent plastic strain, defaulting to the committed value.
    pub fn trial_eps_p_eq(&self) -> f64 {
        self.trial.map_or(self.committed.1, |t| t.1)
    }

    /// Promotes the trial (if any) to committed history.
    pub fn commit(&mut self) {
        if let Some(t) = self.trial.take() {
            self.committed = t;
        }
    }

    /// Discards the trial.
    pub fn cancel(&mut self) {
        self.trial = None;
    }
}

impl Default for UniaxialState {
    fn default() -> Self {
        Self::new()
    }
}

/// 1D radial-return update: elastic predictor σ_tr = E(ε − ε_p), yield check
/// against σ_t(ε_p_eq), plastic corrector solving
/// `|σ_tr| − E Δγ − σ_t(ε_p_eq + Δγ) = 0` for Δγ ≥ 0. The elastoplastic
/// tangent is `E·H/(E + H)` with `H = dσ_t/dε_p_eq` at the updated state.
pub fn uniaxial_plastic_update(
    sigma_t: &HardeningCurve,
    e: f64,
    state: &mut UniaxialState,
    eps: f64,
) -> Result<StressTangent, MaterialError> {
    if !eps.is_finite() {
        return Err(MaterialError::NonFinite);
    }
    let (eps_p_n, eps_p_eq_n) = state.committed;
    let sig_tr = e * (eps - eps_p_n);
    let f_tr = sig_tr.abs() - sigma_t.value(eps_p_eq_n);

    if f_tr <= 0.0 {
        state.trial = Some(state.committed);
        return Ok(StressTangent {
            stress: DVector::from_element(1, sig_tr),
            tangent: DMatrix::from_element(1, 1, e),
        });
    }

    // Newton on g(Δγ) = |σ_tr| − EΔγ − σ_t(ε_p_eq + Δγ); g' = −E − H < 0, so
    // the iteration is globally convergent from Δγ = 0.
    let mut dgamma = 0.0;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let g = sig_tr.abs() - e * dgamma - sigma_t.value(eps_p_eq_n + dgamma);
        if g.abs() <= TOL * sigma_t.value(eps_p_eq_n).max(sig_tr.abs()) {
            converged = true;
            break;
        }
        let gp = -e - sigma_t.slope(eps_p_eq_n + dgamma);
        dgamma -= g / gp;
    }
    if !converged {
        return Err(MaterialError::ReturnMapDiverged { iterations: MAX_ITER });
    }

    let sign = sig_tr.signum();
    let sig = sig_tr - e * dgamma * sign;
    let eps_p_eq = eps_p_eq_n + dgamma;
    state.trial = Some((eps_p_n + dgamma * sign, eps_p_eq));
    let h = sigma_t.slope(eps_p_eq);
    Ok(StressTangent {
        stress: DVector::from_element(1, sig),
        tangent: DMatrix::from_element(1, 1, e * h / (e + h)),
    })
}

/// [`Material`] wrapper owning the 1D parameters and state.
#[derive(Debug, Clone)]
pub struct UniaxialPlastic {
    sigma_t: HardeningCurve,
    e: f64,
    state: UniaxialState,
}

impl UniaxialPlastic {
    /// Creates a virgin 1D elastoplastic point.
    pub fn new(e: f64, sigma_t: HardeningCurve) -> Self {
        assert!(e > 0.0, "Young's modulus must be positive");
        Self { sigma_t, e, state: UniaxialState::new() }
    }

    /// The committed/trial history.
    pub fn state(&self) -> &UniaxialState {
        &self.state
    }
}

impl Material for UniaxialPlastic {
    fn n_strain(&self) -> usize {
        1
    }

    fn update(&mut self, eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
        if eps.len() != 1 {
            return Err(MaterialError::DimensionMismatch { expected: 1, got: eps.len() });
        }
        uniaxial_plastic_update(&self.sigma_t, self.e, &mut self.state, eps[0])
    }

    fn commit(&mut self) {
        self.state.commit();
    }

    fn cancel(&mut self) {
        self.state.cancel();
    }

    fn eps_p_eq(&self) -> f64 {
        self.state.eps_p_eq()
    }

    fn trial_eps_p_eq(&self) -> f64 {
        self.state.trial_eps_p_eq()
    }

    fn clone_pristine(&self) -> Box<dyn Material> {
        Box::new(Self::new(self.e, self.sigma_t))
    }
}
