//! Pressure-dependent elastoplasticity for epoxy matrices (Melro et al.).
//!
//! Yield is governed by the paraboloidal surface
//!
//! ```text
//! f(σ, ε_p_eq) = 3J₂ + I₁ (σ_c − σ_t) − σ_c σ_t
//! ```
//!
//! (the common factor 2 of the original publication is divided out), with
//! tensile and compressive yield stresses `σ_t`, `σ_c` hardening with the
//! equivalent plastic strain. Flow is non-associative with the potential
//! `g = 3J₂ + α p²`, where
//!
//! ```text
//! α = (9/2)(1 − 2ν_p)/(1 + ν_p)
//! ```
//!
//! is set by the plastic Poisson ratio `ν_p`, and the equivalent plastic
//! strain rate is `Δε_p_eq = √(1/(1+2ν_p²)) ‖Δε_p‖`.
//!
//! The backward-Euler return map reduces to a scalar equation in the plastic
//! multiplier Δγ because both the deviatoric and volumetric parts return
//! radially:
//!
//! ```text
//! s = s_tr / (1 + 6 G Δγ),   p = p_tr / (1 + 2 α K Δγ)
//! ```
//!
//! It is solved with a safeguarded Newton iteration (bisection fallback on a
//! sign-change bracket). The consistent tangent follows from implicit
//! differentiation of the converged update; with non-associative flow it is
//! unsymmetric. Internally all states are full 3D tensors; the plane-strain
//! interface embeds/extracts the `(xx, yy, xy)` components.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{
    elastic_matrix, AnalysisMode, ElasticParams, HardeningCurve, Material, MaterialError,
    StressTangent,
};

/// Iteration cap for the scalar return-map Newton loop.
const RETURN_MAP_MAX_ITER: usize = 50;
/// Relative tolerance on the yield residual.
const RETURN_MAP_TOL: f64 = 1e-10;

/// Parameters of the Melro model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelroParams {
    /// Young's modulus (MPa).
    pub e: f64,
    /// Elastic Poisson ratio.
    pub nu: f64,
    /// Plastic Poisson ratio ν_p controlling the volumetric flow.
    pub nu_p: f64,
    /// Tensile yield curve σ_t(ε_p_eq).
    pub sigma_t: HardeningCurve,
    /// Compressive yield curve σ_c(ε_p_eq).
    pub sigma_c: HardeningCurve,
}

impl MelroParams {
    /// Creates validated parameters.
    pub fn new(e: f64, nu: f64, nu_p: f64, sigma_t: HardeningCurve, sigma_c: HardeningCurve) -> Self {
        assert!(e > 0.0, "Young's modulus must be positive");
        assert!((-1.0..0.5).contains(&nu), "Poisson ratio must lie in (−1, 0.5)");
        assert!((0.0..=0.5).contains(&nu_p), "plastic Poisson ratio must lie in [0, 0.5]");
        Self { e, nu, nu_p, sigma_t, sigma_c }
    }

    /// The epoxy parameter set used throughout the examples: E = 3130 MPa,
    /// ν = 0.37, ν_p = 0.32, with saturation-type tensile and compressive
    /// yield curves.
    pub fn epoxy() -> Self {
        Self::new(
            3130.0,
            0.37,
            0.32,
            HardeningCurve::new(64.80, -33.6, 0.003407, -10.21, 0.06493),
            HardeningCurve::new(81.00, -42.0, 0.003407, -12.77, 0.06493),
        )
    }

    /// Shear modulus G.
    pub fn g(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }

    /// Bulk modulus K.
    pub fn k(&self) -> f64 {
        self.e / (3.0 * (1.0 - 2.0 * self.nu))
    }

    /// Plastic-potential pressure coefficient α = (9/2)(1−2ν_p)/(1+ν_p).
    pub fn alpha(&self) -> f64 {
        4.5 * (1.0 - 2.0 * self.nu_p) / (1.0 + self.nu_p)
    }

    /// Norm factor √(1/(1+2ν_p²)) relating ‖Δε_p‖ to Δε_p_eq.
    pub fn c_eps(&self) -> f64 {
        (1.0 / (1.0 + 2.0 * self.nu_p * self.nu_p)).sqrt()
    }
}

/// Plastic strain tensor and equivalent plastic strain at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PlasticRecord {
    eps_p: Matrix3<f64>,
    eps_p_eq: f64,
}

impl PlasticRecord {
    fn virgin() -> Self {
        Self { eps_p: Matrix3::zeros(), eps_p_eq: 0.0 }
    }
}

/// Committed/trial history pair of a Melro integration point.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticState {
    committed: PlasticRecord,
    trial: Option<PlasticRecord>,
}

impl PlasticState {
    /// A virgin state with zero plastic strain.
    pub fn new() -> Self {
        Self { committed: PlasticRecord::virgin(), trial: None }
    }

    /// Committed equivalent plastic strain.
    pub fn eps_p_eq(&self) -> f64 {
        self.committed.eps_p_eq
    }

    /// Equivalent plastic strain of the trial, defaulting to the committed
    /// value when no trial exists.
    pub fn trial_eps_p_eq(&self) -> f64 {
        self.trial.map_or(self.committed.eps_p_eq, |t| t.eps_p_eq)
    }

    /// Whether an uncommitted trial exists.
    pub fn has_trial(&self) -> bool {
        self.trial.is_some()
    }
}

impl Default for PlasticState {
    fn default() -> Self {
        Self::new()
    }
}

/// Promotes the trial state (if any) to committed history.
pub fn melro_commit(state: &mut PlasticState) {
    if let Some(t) = state.trial.take() {
        debug_assert!(
            t.eps_p_eq >= state.committed.eps_p_eq,
            "equivalent plastic strain must not decrease"
        );
        state.committed = t;
    }
}

/// Discards the trial state.
pub fn melro_cancel(state: &mut PlasticState) {
    state.trial = None;
}

/// Symmetric tensor from a 6-component Voigt vector with engineering shear,
/// ordered (xx, yy, zz, xy, yz, zx).
fn tensor_from_voigt_strain(v: &DVector<f64>) -> Matrix3<f64> {
    Matrix3::new(
        v[0],
        0.5 * v[3],
        0.5 * v[5],
        0.5 * v[3],
        v[1],
        0.5 * v[4],
        0.5 * v[4],
        0.5 * v[5],
        v[2],
    )
}

/// 6-component Voigt stress vector (tensor shear) from a symmetric tensor.
fn voigt_from_tensor_stress(m: &Matrix3<f64>) -> DVector<f64> {
    DVector::from_column_slice(&[
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        m[(0, 1)],
        m[(1, 2)],
        m[(0, 2)],
    ])
}

fn dev(m: &Matrix3<f64>) -> Matrix3<f64> {
    m - Matrix3::identity() * (m.trace() / 3.0)
}

/// Converged return-map data needed for the consistent tangent.
struct ReturnMap {
    dgamma: f64,
    p: f64,
    a: f64,
    b: f64,
    eps_p_eq: f64,
    /// Total derivative dr/dΔγ at the solution.
    dr_dgamma: f64,
}

/// Scalar yield residual and its total derivative at a candidate Δγ.
fn residual(
    params: &MelroParams,
    j2_tr: f64,
    p_tr: f64,
    eps_p_eq_n: f64,
    dgamma: f64,
) -> (f64, f64, f64) {
    let (g, k, alpha, c) = (params.g(), params.k(), params.alpha(), params.c_eps());
    let a = 1.0 + 6.0 * g * dgamma;
    let b = 1.0 + 2.0 * alpha * k * dgamma;
    let j2 = j2_tr / (a * a);
    let p = p_tr / b;
    let q = 18.0 * j2 + (4.0 / 3.0) * alpha * alpha * p * p;
    let sqrt_q = q.max(0.0).sqrt();
    let eps_p_eq = eps_p_eq_n + c * dgamma * sqrt_q;

    let st = params.sigma_t.value(eps_p_eq);
    let sc = params.sigma_c.value(eps_p_eq);
    let r = 3.0 * j2 + 3.0 * p * (sc - st) - sc * st;

    let dj2 = -12.0 * g * j2 / a;
    let dp = -2.0 * alpha * k * p / b;
    let dq = 18.0 * dj2 + (8.0 / 3.0) * alpha * alpha * p * dp;
    let deps = if sqrt_q > 0.0 { c * (sqrt_q + dgamma * dq / (2.0 * sqrt_q)) } else { 0.0 };
    let stp = params.sigma_t.slope(eps_p_eq);
    let scp = params.sigma_c.slope(eps_p_eq);
    let hterm = 3.0 * p * (scp - stp) - (scp * st + sc * stp);
    let dr = 3.0 * dj2 + 3.0 * dp * (sc - st) + hterm * deps;
    (r, dr, eps_p_eq)
}

/// Solves the return map for Δγ with Newton iterations safeguarded by a
/// sign-change bracket.
fn solve_return_map(
    params: &MelroParams,
    j2_tr: f64,
    p_tr: f64,
    eps_p_eq_n: f64,
    f_trial: f64,
) -> Result<ReturnMap, MaterialError> {
    let scale = f_trial.max(
        params.sigma_c.value(eps_p_eq_n) * params.sigma_t.value(eps_p_eq_n),
    );

    // Bracket the root: r(0) = f_trial > 0, and r → −σ_c σ_t < 0 as Δγ → ∞.
    let mut lo = 0.0;
    let mut hi = 1e-8;
    let mut iters = 0usize;
    while residual(params, j2_tr, p_tr, eps_p_eq_n, hi).0 > 0.0 {
        lo = hi;
        hi *= 8.0;
        iters += 1;
        if iters > 200 || !hi.is_finite() {
            return Err(MaterialError::ReturnMapDiverged { iterations: iters });
        }
    }

    let mut x = lo;
    for _ in 0..RETURN_MAP_MAX_ITER {
        let (r, dr, eps_p_eq) = residual(params, j2_tr, p_tr, eps_p_eq_n, x);
        if r.abs() <= RETURN_MAP_TOL * scale {
            let (g, k, alpha) = (params.g(), params.k(), params.alpha());
            let a = 1.0 + 6.0 * g * x;
            let b = 1.0 + 2.0 * alpha * k * x;
            return Ok(ReturnMap { dgamma: x, p: p_tr / b, a, b, eps_p_eq, dr_dgamma: dr });
        }
        if r > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - r / dr;
        x = if dr < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(MaterialError::ReturnMapDiverged { iterations: RETURN_MAP_MAX_ITER })
}

/// Full 3D constitutive update in 6-component Voigt form (engineering
/// shear). Computes stress and consistent tangent from the committed state
/// and stores the trial history in `state`.
pub fn melro_update_3d(
    params: &MelroParams,
    state: &mut PlasticState,
    eps: &DVector<f64>,
) -> Result<StressTangent, MaterialError> {
    if eps.len() != 6 {
        return Err(MaterialError::DimensionMismatch { expected: 6, got: eps.len() });
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(MaterialError::NonFinite);
    }
    let (g, k, alpha, c) = (params.g(), params.k(), params.alpha(), params.c_eps());
    let eps_t = tensor_from_voigt_strain(eps);
    let n = state.committed;

    // Elastic predictor.
    let eps_e_tr = eps_t - n.eps_p;
    let s_tr = dev(&eps_e_tr) * (2.0 * g);
    let p_tr = k * eps_e_tr.trace();
    let j2_tr = 0.5 * (s_tr.component_mul(&s_tr)).sum();
    let st0 = params.sigma_t.value(n.eps_p_eq);
    let sc0 = params.sigma_c.value(n.eps_p_eq);
    let f_trial = 3.0 * j2_tr + 3.0 * p_tr * (sc0 - st0) - sc0 * st0;

    if f_trial <= 0.0 {
        // Inside the elastic domain: Hooke's law with the unchanged history.
        state.trial = Some(n);
        let sigma = s_tr + Matrix3::identity() * p_tr;
        let d = elastic_matrix_3d(g, k);
        return Ok(StressTangent { stress: voigt_from_tensor_stress(&sigma), tangent: d });
    }

    let rm = solve_return_map(params, j2_tr, p_tr, n.eps_p_eq, f_trial)?;
    let s = s_tr / rm.a;
    let sigma = s + Matrix3::identity() * rm.p;

    // Plastic strain update along ∂g/∂σ = 3s + (2α/3) p I.
    let flow = s * 3.0 + Matrix3::identity() * (2.0 * alpha / 3.0 * rm.p);
    state.trial = Some(PlasticRecord {
        eps_p: n.eps_p + flow * rm.dgamma,
        eps_p_eq: rm.eps_p_eq,
    });

    // Consistent tangent by implicit differentiation: with r(Δγ, ε) = 0,
    //   dσ = D_rad dε + (∂σ/∂Δγ) dΔγ,   dΔγ = −(∂r/∂ε : dε)/(dr/dΔγ),
    // where D_rad is the radially scaled elastic map. All pieces are
    // assembled as tensors and converted to Voigt columns at the end, which
    // keeps the engineering-shear bookkeeping in one place.
    let st = params.sigma_t.value(rm.eps_p_eq);
    let sc = params.sigma_c.value(rm.eps_p_eq);
    let stp = params.sigma_t.slope(rm.eps_p_eq);
    let scp = params.sigma_c.slope(rm.eps_p_eq);
    let j2 = j2_tr / (rm.a * rm.a);
    let q = 18.0 * j2 + (4.0 / 3.0) * alpha * alpha * rm.p * rm.p;
    let sqrt_q = q.max(0.0).sqrt();
    let hterm = 3.0 * rm.p * (scp - stp) - (scp * st + sc * stp);

    // ∂r/∂ε (at fixed Δγ), as a symmetric tensor β_s s + β_I I.
    let deps_fac = if sqrt_q > 0.0 { c * rm.dgamma / (2.0 * sqrt_q) } else { 0.0 };
    let beta_s = 6.0 * g / rm.a + hterm * deps_fac * 36.0 * g / rm.a;
    let beta_i = 3.0 * (k / rm.b) * (sc - st)
        + hterm * deps_fac * (8.0 / 3.0) * alpha * alpha * rm.p * (k / rm.b);
    let dr_deps = s * beta_s + Matrix3::identity() * beta_i;

    // ∂σ/∂Δγ.
    let dsig_dgamma =
        s * (-6.0 * g / rm.a) + Matrix3::identity() * (-2.0 * alpha * k * rm.p / rm.b);

    let w = dr_deps / (-rm.dr_dgamma);
    let g_a = 2.0 * g / rm.a;
    let k_b = k / rm.b;
    let mut d = DMatrix::zeros(6, 6);
    for j in 0..6 {
        let mut de = DVector::zeros(6);
        de[j] = 1.0;
        let de_t = tensor_from_voigt_strain(&de);
        let mut dsig = dev(&de_t) * g_a + Matrix3::identity() * (k_b * de_t.trace());
        let dgam = (w.component_mul(&de_t)).sum();
        dsig += dsig_dgamma * dgam;
        d.set_column(j, &voigt_from_tensor_stress(&dsig));
    }
    Ok(StressTangent { stress: voigt_from_tensor_stress(&sigma), tangent: d })
}

/// 3D isotropic elastic matrix in Voigt form from shear and bulk moduli.
fn elastic_matrix_3d(g: f64, k: f64) -> DMatrix<f64> {
    let lambda = k - 2.0 * g / 3.0;
    let mut d = DMatrix::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = lambda;
        }
        d[(i, i)] += 2.0 * g;
        d[(i + 3, i + 3)] = g;
    }
    d
}

/// Plane-strain constitutive update: embeds `(xx, yy, xy)` into the 3D model
/// with ε_zz = γ_yz = γ_zx = 0 and extracts the in-plane stress and tangent
/// rows/columns. The out-of-plane stress σ_zz exists but is not returned.
pub fn melro_update(
    params: &MelroParams,
    state: &mut PlasticState,
    eps: &DVector<f64>,
) -> Result<StressTangent, MaterialError> {
    if eps.len() != 3 {
        return Err(MaterialError::DimensionMismatch { expected: 3, got: eps.len() });
    }
    let mut eps6 = DVector::zeros(6);
    eps6[0] = eps[0];
    eps6[1] = eps[1];
    eps6[3] = eps[2];
    let full = melro_update_3d(params, state, &eps6)?;
    let idx = [0usize, 1, 3];
    let mut stress = DVector::zeros(3);
    let mut tangent = DMatrix::zeros(3, 3);
    for (i, &bi) in idx.iter().enumerate() {
        stress[i] = full.stress[bi];
        for (j, &bj) in idx.iter().enumerate() {
            tangent[(i, j)] = full.tangent[(bi, bj)];
        }
    }
    Ok(StressTangent { stress, tangent })
}

/// Plane-strain [`Material`] wrapper owning Melro parameters and state.
#[derive(Debug, Clone)]
pub struct MelroPlaneStrain {
    params: MelroParams,
    state: PlasticState,
}

impl MelroPlaneStrain {
    /// Creates a virgin plane-strain point.
    pub fn new(params: MelroParams) -> Self {
        Self { params, state: PlasticState::new() }
    }

    /// The underlying parameters.
    pub fn params(&self) -> &MelroParams {
        &self.params
    }

    /// The committed/trial history.
    pub fn state(&self) -> &PlasticState {
        &self.state
    }
}

impl Material for MelroPlaneStrain {
    fn n_strain(&self) -> usize {
        3
    }

    fn update(&mut self, eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
        melro_update(&self.params, &mut self.state, eps)
    }

    fn commit(&mut self) {
        melro_commit(&mut self.state);
    }

    fn cancel(&mut self) {
        melro_cancel(&mut self.state);
    }

    fn eps_p_eq(&self) -> f64 {
        self.state.eps_p_eq()
    }

    fn trial_eps_p_eq(&self) -> f64 {
        self.state.trial_eps_p_eq()
    }

    fn clone_pristine(&self) -> Box<dyn Material> {
        Box::new(Self::new(self.params))
    }
}

/// The elastic matrix corresponding to [`MelroParams`] in plane strain,
/// useful as the `D_e` baseline of surrogate decompositions.
pub fn melro_elastic_plane_strain(params: &MelroParams) -> DMatrix<f64> {
    elastic_matrix(&ElasticParams::new(params.e, params.nu, AnalysisMode::PlaneStrain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_column_slice(&[a, b, c])
    }

    /// Drives the 3D point under uniaxial stress: prescribes ε_xx and finds
    /// the lateral strain ε_yy = ε_zz that zeroes the lateral stresses
    /// (equal by symmetry). Returns the axial stress.
    fn uniaxial_stress_step(
        params: &MelroParams,
        state: &mut PlasticState,
        eps_xx: f64,
        eps_lat0: f64,
    ) -> (f64, f64) {
        let mut eps_lat = eps_lat0;
        for _ in 0..40 {
            let mut eps = DVector::zeros(6);
            eps[0] = eps_xx;
            eps[1] = eps_lat;
            eps[2] = eps_lat;
            let st = melro_update_3d(params, state, &eps).unwrap();
            let r = st.stress[1];
            if r.abs() < 1e-10 * params.e {
                return (st.stress[0], eps_lat);
            }
            // dσ_yy/dε_lat with ε_yy = ε_zz moving together.
            let slope = st.tangent[(1, 1)] + st.tangent[(1, 2)];
            eps_lat -= r / slope;
        }
        panic!("uniaxial stress driver did not converge at eps_xx = {eps_xx}");
    }

    #[test]
    fn elastic_branch_returns_hookean_response() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let eps = v3(1e-4, -2e-5, 5e-5);
        let st = melro_update(&params, &mut state, &eps).unwrap();
        let d = melro_elastic_plane_strain(&params);
        assert_relative_eq!(st.stress, &d * &eps, max_relative = 1e-12);
        assert_relative_eq!(st.tangent, d, max_relative = 1e-12);
        assert_abs_diff_eq!(state.trial_eps_p_eq(), 0.0);
    }

    #[test]
    fn uniaxial_tension_yields_at_the_tensile_curve_onset() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let mut eps_lat = 0.0;
        let mut last_elastic_stress = 0.0;
        let mut onset_stress = None;
        let deps = 2e-5;
        for i in 1..=800 {
            let eps_xx = deps * i as f64;
            let (sig, lat) = uniaxial_stress_step(&params, &mut state, eps_xx, eps_lat);
            eps_lat = lat;
            if state.trial_eps_p_eq() > 0.0 {
                onset_stress = Some(sig);
                break;
            }
            last_elastic_stress = sig;
            melro_commit(&mut state);
        }
        let onset = onset_stress.expect("ramp never reached yield");
        // The last elastic stress and the first plastic stress bracket the
        // initial tensile yield stress σ_t(0) = 20.99 MPa.
        assert!(
            last_elastic_stress <= 20.99 + 1e-6 && onset >= 20.99 - 0.1,
            "yield onset bracketed by [{last_elastic_stress}, {onset}], expected ≈ 20.99"
        );
        assert_abs_diff_eq!(onset, 20.99, epsilon = 0.1);
    }

    #[test]
    fn uniaxial_tension_approaches_the_saturation_stress() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let mut eps_lat = 0.0;
        let mut sig = 0.0;
        // Coarse ramp deep into the plastic regime.
        let mut eps_xx = 0.0;
        for _ in 0..1600 {
            eps_xx += 5e-4;
            let (s, lat) = uniaxial_stress_step(&params, &mut state, eps_xx, eps_lat);
            sig = s;
            eps_lat = lat;
            melro_commit(&mut state);
        }
        assert!(
            state.eps_p_eq() > 0.4,
            "expected deep plastic flow, got eps_p_eq = {}",
            state.eps_p_eq()
        );
        assert_relative_eq!(sig, 64.80, max_relative = 0.01);
    }

    #[test]
    fn uniaxial_compression_yields_at_the_compressive_curve_onset() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let mut eps_lat = 0.0;
        let deps = -2e-5;
        let mut onset = None;
        for i in 1..=1200 {
            let (sig, lat) = uniaxial_stress_step(&params, &mut state, deps * i as f64, eps_lat);
            eps_lat = lat;
            if state.trial_eps_p_eq() > 0.0 {
                onset = Some(sig);
                break;
            }
            melro_commit(&mut state);
        }
        // σ_c(0) = 81.00 − 42.0 − 12.77 = 26.23 MPa in compression.
        assert_abs_diff_eq!(onset.expect("no compressive yield"), -26.23, epsilon = 0.1);
    }

    #[test]
    fn tangent_matches_finite_differences_in_the_plastic_regime() {
        let params = MelroParams::epoxy();
        // A committed plastic state reached by a first loading step.
        let mut state = PlasticState::new();
        let eps0 = v3(0.02, -0.003, 0.008);
        melro_update(&params, &mut state, &eps0).unwrap();
        melro_commit(&mut state);
        assert!(state.eps_p_eq() > 0.0, "setup step should be plastic");

        for (case, eps) in [
            ("continued plastic loading", v3(0.03, -0.002, 0.012)),
            ("different direction", v3(0.025, 0.004, -0.015)),
        ] {
            let mut s1 = state.clone();
            let st = melro_update(&params, &mut s1, &eps).unwrap();
            assert!(s1.trial_eps_p_eq() > state.eps_p_eq(), "{case}: should be plastic");
            let h = 1e-7;
            for j in 0..3 {
                let mut ep = eps.clone();
                let mut em = eps.clone();
                ep[j] += h;
                em[j] -= h;
                let mut sp = state.clone();
                let mut sm = state.clone();
                let fp = melro_update(&params, &mut sp, &ep).unwrap().stress;
                let fm = melro_update(&params, &mut sm, &em).unwrap().stress;
                for i in 0..3 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert_relative_eq!(
                        st.tangent[(i, j)],
                        fd,
                        max_relative = 1e-4,
                        epsilon = 1e-3 * params.e
                    );
                }
            }
        }
    }

    #[test]
    fn tangent_is_unsymmetric_under_plastic_flow() {
        // Non-associative flow makes the consistent tangent unsymmetric;
        // symmetry here would indicate a wiring bug.
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let st = melro_update(&params, &mut state, &v3(0.02, -0.003, 0.008)).unwrap();
        let asym = (&st.tangent - st.tangent.transpose()).norm();
        assert!(asym > 1e-6 * st.tangent.norm(), "tangent unexpectedly symmetric");
    }

    #[test]
    fn cancel_restores_the_committed_state() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        melro_update(&params, &mut state, &v3(0.02, 0.0, 0.0)).unwrap();
        melro_commit(&mut state);
        let snapshot = state.clone();
        melro_update(&params, &mut state, &v3(0.05, 0.01, -0.01)).unwrap();
        assert!(state.trial_eps_p_eq() > snapshot.eps_p_eq());
        melro_cancel(&mut state);
        assert_eq!(state, snapshot);
    }

    #[test]
    fn commit_without_update_is_idempotent() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        melro_update(&params, &mut state, &v3(0.02, 0.0, 0.0)).unwrap();
        melro_commit(&mut state);
        let snapshot = state.clone();
        melro_commit(&mut state);
        assert_eq!(state, snapshot);
    }

    #[test]
    fn eps_p_eq_is_monotone_over_commits() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let mut prev = 0.0;
        // Load, partially unload, reload: the committed measure never drops.
        let path = [0.01, 0.02, 0.03, 0.02, 0.01, 0.025, 0.04];
        for &e in &path {
            melro_update(&params, &mut state, &v3(e, -0.2 * e, 0.5 * e)).unwrap();
            melro_commit(&mut state);
            assert!(state.eps_p_eq() >= prev, "eps_p_eq decreased");
            prev = state.eps_p_eq();
        }
        assert!(prev > 0.0, "path should have caused plastic flow");
    }

    #[test]
    fn closed_strain_cycle_dissipates_non_negative_work() {
        let params = MelroParams::epoxy();
        let mut state = PlasticState::new();
        let n_steps = 60;
        let peak = v3(0.03, 0.01, 0.02);
        let mut work = 0.0;
        let mut prev_eps = v3(0.0, 0.0, 0.0);
        let mut prev_sig = melro_update(&params, &mut state, &prev_eps).unwrap().stress;
        melro_commit(&mut state);
        // Ramp up to the peak and straight back to zero strain.
        for i in 1..=(2 * n_steps) {
            let t = if i <= n_steps {
                i as f64 / n_steps as f64
            } else {
                (2 * n_steps - i) as f64 / n_steps as f64
            };
            let eps = &peak * t;
            let sig = melro_update(&params, &mut state, &eps).unwrap().stress;
            melro_commit(&mut state);
            work += 0.5 * (&sig + &prev_sig).dot(&(&eps - &prev_eps));
            prev_eps = eps;
            prev_sig = sig;
        }
        assert!(state.eps_p_eq() > 0.0, "cycle should involve plastic flow");
        assert!(work >= 0.0, "closed-cycle work {work} must be non-negative");
    }
}
