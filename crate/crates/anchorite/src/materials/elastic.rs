//! Isotropic linear elasticity for the supported analysis modes.

use nalgebra::{DMatrix, DVector};

use super::{AnalysisMode, Material, MaterialError, StressTangent};

/// Isotropic elastic constants plus the analysis mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    /// Young's modulus (MPa).
    pub e: f64,
    /// Poisson ratio.
    pub nu: f64,
    /// Analysis mode fixing the matrix layout.
    pub mode: AnalysisMode,
}

impl ElasticParams {
    /// Creates validated parameters.
    pub fn new(e: f64, nu: f64, mode: AnalysisMode) -> Self {
        assert!(e > 0.0, "Young's modulus must be positive, got {e}");
        assert!((-1.0..0.5).contains(&nu), "Poisson ratio must lie in (−1, 0.5), got {nu}");
        Self { e, nu, mode }
    }
}

/// The elastic matrix `D_e` for the given parameters and mode.
pub fn elastic_matrix(params: &ElasticParams) -> DMatrix<f64> {
    let (e, nu) = (params.e, params.nu);
    match params.mode {
        AnalysisMode::Uniaxial => DMatrix::from_element(1, 1, e),
        AnalysisMode::PlaneStress => {
            let c = e / (1.0 - nu * nu);
            DMatrix::from_row_slice(
                3,
                3,
                &[c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0],
            )
        }
        AnalysisMode::PlaneStrain => {
            let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
            let g = e / (2.0 * (1.0 + nu));
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    lambda + 2.0 * g,
                    lambda,
                    0.0,
                    lambda,
                    lambda + 2.0 * g,
                    0.0,
                    0.0,
                    0.0,
                    g,
                ],
            )
        }
    }
}

/// Stress and (constant) tangent for a linear elastic point:
/// `stress = D_e ε`, `tangent = D_e`.
pub fn elastic_update(params: &ElasticParams, eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
    let n = params.mode.n_components();
    if eps.len() != n {
        return Err(MaterialError::DimensionMismatch { expected: n, got: eps.len() });
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(MaterialError::NonFinite);
    }
    let d = elastic_matrix(params);
    Ok(StressTangent { stress: &d * eps, tangent: d })
}

/// Stateless [`Material`] wrapper around [`elastic_update`]; commit and
/// cancel are no-ops because elasticity carries no history.
#[derive(Debug, Clone)]
pub struct ElasticMaterial {
    params: ElasticParams,
    d: DMatrix<f64>,
}

impl ElasticMaterial {
    /// Creates the material, caching `D_e`.
    pub fn new(params: ElasticParams) -> Self {
        let d = elastic_matrix(&params);
        Self { params, d }
    }

    /// The underlying parameters.
    pub fn params(&self) -> &ElasticParams {
        &self.params
    }
}

impl Material for ElasticMaterial {
    fn n_strain(&self) -> usize {
        self.params.mode.n_components()
    }

    fn update(&mut self, eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
        let n = self.n_strain();
        if eps.len() != n {
            return Err(MaterialError::DimensionMismatch { expected: n, got: eps.len() });
        }
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(MaterialError::NonFinite);
        }
        Ok(StressTangent { stress: &self.d * eps, tangent: self.d.clone() })
    }

    fn commit(&mut self) {}

    fn cancel(&mut self) {}

    fn eps_p_eq(&self) -> f64 {
        0.0
    }

    fn trial_eps_p_eq(&self) -> f64 {
        0.0
    }

    fn clone_pristine(&self) -> Box<dyn Material> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn zero_strain_gives_zero_stress() {
        let p = ElasticParams::new(3130.0, 0.37, AnalysisMode::PlaneStrain);
        let st = elastic_update(&p, &DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(st.stress.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn uniaxial_stress_is_e_times_strain() {
        let p = ElasticParams::new(3130.0, 0.37, AnalysisMode::Uniaxial);
        let st = elastic_update(&p, &DVector::from_element(1, 0.001)).unwrap();
        assert_relative_eq!(st.stress[0], 3.13, max_relative = 1e-12);
        assert_relative_eq!(st.tangent[(0, 0)], 3130.0, max_relative = 1e-12);
    }

    #[test]
    fn plane_strain_first_diagonal_entry() {
        let p = ElasticParams::new(3130.0, 0.37, AnalysisMode::PlaneStrain);
        let d = elastic_matrix(&p);
        let expected = 3130.0 * (1.0 - 0.37) / ((1.0 + 0.37) * (1.0 - 2.0 * 0.37));
        assert_relative_eq!(d[(0, 0)], expected, max_relative = 1e-14);
        assert_relative_eq!(d[(0, 0)], 5536.9, max_relative = 2e-4);
        // Shear diagonal must be G, not 2G (engineering-shear convention).
        assert_relative_eq!(d[(2, 2)], 3130.0 / (2.0 * 1.37), max_relative = 1e-14);
    }

    #[test]
    fn plane_stress_matrix_matches_closed_form() {
        let p = ElasticParams::new(200.0, 0.3, AnalysisMode::PlaneStress);
        let d = elastic_matrix(&p);
        let c = 200.0 / (1.0 - 0.09);
        assert_relative_eq!(d[(0, 0)], c, max_relative = 1e-14);
        assert_relative_eq!(d[(0, 1)], 0.3 * c, max_relative = 1e-14);
        assert_relative_eq!(d[(2, 2)], c * 0.35, max_relative = 1e-14);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let p = ElasticParams::new(100.0, 0.2, AnalysisMode::PlaneStrain);
        assert!(matches!(
            elastic_update(&p, &DVector::zeros(2)),
            Err(MaterialError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }
}
