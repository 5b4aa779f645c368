//! Element kinematics: quadrature rules and strain–displacement matrices.
//!
//! Strains follow the engineering Voigt convention used by the material
//! models: the shear entry of a two-dimensional strain vector is
//! `gamma_xy = 2 eps_xy`, so the B-matrix rows are `[dN/dx, 0]`,
//! `[0, dN/dy]` and `[dN/dy, dN/dx]` (Zienkiewicz & Taylor, *The Finite
//! Element Method*, 7th ed., ch. 6).  Bars carry a single axial strain
//! component and a cross-section area evaluated at the integration point,
//! which is how the tapered-bar geometry enters the assembly.

use nalgebra::DMatrix;

use super::mesh::{quad_shape_derivatives, triangle_area, Element, ElementType, Mesh};
use super::FemError;
use crate::materials::AnalysisMode;

/// Polynomial describing the tapered-bar cross-section over half the span;
/// the bar is mirrored about its midpoint so the area stays positive.
fn tapered_profile(x: f64) -> f64 {
    0.8 - 2.0 * (0.0534 * x - 0.000418 * x * x)
}

/// Default length of the tapered bar; the profile is mirrored about
/// `length / 2`, which keeps the area positive and places the narrowest
/// section (the plastic hot spot) at the bar centre.
pub const TAPERED_BAR_LENGTH: f64 = 12.0;

/// Cross-section area of a bar, evaluated per integration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarSection {
    /// Uniform cross-section.
    Constant(f64),
    /// Variable cross-section `A(x)` mirrored about `length / 2`, shrinking
    /// from 0.8 at both ends to a waist at the centre.
    Tapered {
        /// Bar length; the profile argument is `min(x, length - x)`.
        length: f64,
    },
}

impl BarSection {
    /// Uniform section of area `area`.
    ///
    /// # Panics
    /// Panics unless `area > 0`.
    pub fn constant(area: f64) -> Self {
        assert!(area > 0.0, "bar cross-section area must be positive, got {area}");
        BarSection::Constant(area)
    }

    /// Mirrored tapered section over a bar of the given length.
    ///
    /// # Panics
    /// Panics if the waist area `A(length / 2)` would be non-positive
    /// (the profile polynomial has a root near 7.99, so lengths must stay
    /// below twice that).
    pub fn tapered(length: f64) -> Self {
        assert!(length > 0.0, "bar length must be positive, got {length}");
        assert!(
            tapered_profile(length / 2.0) > 0.0,
            "tapered profile is non-positive at the waist for length {length}"
        );
        BarSection::Tapered { length }
    }

    /// Area at axial coordinate `x`.
    pub fn area(&self, x: f64) -> f64 {
        let a = match *self {
            BarSection::Constant(area) => area,
            BarSection::Tapered { length } => tapered_profile(x.min(length - x)),
        };
        assert!(a > 0.0, "cross-section area must stay positive, got {a} at x = {x}");
        a
    }
}

impl Default for BarSection {
    fn default() -> Self {
        BarSection::Constant(1.0)
    }
}

/// Precomputed data for one integration point.
///
/// `weight` bundles the quadrature weight, the Jacobian determinant and —
/// for bars — the cross-section area, so an integrand is accumulated as
/// `value * weight`.
#[derive(Debug, Clone)]
pub(crate) struct IpEntry {
    /// Owning element index.
    pub element: usize,
    /// Global dof indices of the element, node-major.
    pub dofs: Vec<usize>,
    /// Strain–displacement matrix, `n_strain x n_dofs`.
    pub b: DMatrix<f64>,
    /// Integration weight including the Jacobian (and bar area).
    pub weight: f64,
    /// Spatial coordinates of the integration point.
    pub coords: [f64; 2],
}

/// Number of displacement dofs per node for an analysis mode.
pub(crate) fn dofs_per_node(mode: AnalysisMode) -> usize {
    match mode {
        AnalysisMode::Uniaxial => 1,
        AnalysisMode::PlaneStrain | AnalysisMode::PlaneStress => 2,
    }
}

/// Builds the integration-point table for a whole mesh.
///
/// Points are numbered element-major in mesh order, giving every
/// integration point a stable global id.
pub(crate) fn build_ip_table(
    mesh: &Mesh,
    mode: AnalysisMode,
    section: &BarSection,
) -> Result<Vec<IpEntry>, FemError> {
    let mut table = Vec::new();
    for (index, element) in mesh.elements.iter().enumerate() {
        table.extend(element_ips(index, element, &mesh.nodes, mode, section)?);
    }
    Ok(table)
}

fn element_ips(
    index: usize,
    element: &Element,
    nodes: &[[f64; 2]],
    mode: AnalysisMode,
    section: &BarSection,
) -> Result<Vec<IpEntry>, FemError> {
    let dpn = dofs_per_node(mode);
    let invalid = |message: String| FemError::InvalidElement { element: index, message };
    let wrong_mode = |etype: ElementType| {
        FemError::Config(format!(
            "element {index} ({etype}) is not supported in {mode:?} analysis"
        ))
    };
    let dofs: Vec<usize> = element
        .nodes
        .iter()
        .flat_map(|&n| (0..dpn).map(move |c| n * dpn + c))
        .collect();
    let xy = |i: usize| nodes[element.nodes[i]];

    match element.etype {
        ElementType::Bar2 => {
            if mode != AnalysisMode::Uniaxial {
                return Err(wrong_mode(element.etype));
            }
            let (a, b) = (xy(0), xy(1));
            let length = b[0] - a[0];
            if length <= 0.0 {
                return Err(invalid(format!("bar has non-positive length {length}")));
            }
            let xm = 0.5 * (a[0] + b[0]);
            let bmat = DMatrix::from_row_slice(1, 2, &[-1.0 / length, 1.0 / length]);
            Ok(vec![IpEntry {
                element: index,
                dofs,
                b: bmat,
                weight: length * section.area(xm),
                coords: [xm, 0.5 * (a[1] + b[1])],
            }])
        }
        ElementType::Tri3 => {
            if mode == AnalysisMode::Uniaxial {
                return Err(wrong_mode(element.etype));
            }
            let (p0, p1, p2) = (xy(0), xy(1), xy(2));
            let area = triangle_area(p0, p1, p2);
            if area <= 0.0 {
                return Err(invalid(format!("triangle has non-positive area {area}")));
            }
            // Constant shape-function gradients: dN_i/dx = b_i / 2A,
            // dN_i/dy = c_i / 2A with the usual cyclic coefficients.
            let bc = [
                (p1[1] - p2[1], p2[0] - p1[0]),
                (p2[1] - p0[1], p0[0] - p2[0]),
                (p0[1] - p1[1], p1[0] - p0[0]),
            ];
            let mut bmat = DMatrix::zeros(3, 6);
            for (i, &(bi, ci)) in bc.iter().enumerate() {
                let dx = bi / (2.0 * area);
                let dy = ci / (2.0 * area);
                bmat[(0, 2 * i)] = dx;
                bmat[(1, 2 * i + 1)] = dy;
                bmat[(2, 2 * i)] = dy;
                bmat[(2, 2 * i + 1)] = dx;
            }
            let centroid = [
                (p0[0] + p1[0] + p2[0]) / 3.0,
                (p0[1] + p1[1] + p2[1]) / 3.0,
            ];
            Ok(vec![IpEntry {
                element: index,
                dofs,
                b: bmat,
                weight: area,
                coords: centroid,
            }])
        }
        ElementType::Quad4 => {
            if mode == AnalysisMode::Uniaxial {
                return Err(wrong_mode(element.etype));
            }
            let coords = [xy(0), xy(1), xy(2), xy(3)];
            let g = 1.0 / 3.0f64.sqrt();
            let mut ips = Vec::with_capacity(4);
            for (xi, eta) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
                let (dxi, deta) = quad_shape_derivatives(xi, eta);
                let mut j = [[0.0; 2]; 2];
                for i in 0..4 {
                    j[0][0] += dxi[i] * coords[i][0];
                    j[0][1] += dxi[i] * coords[i][1];
                    j[1][0] += deta[i] * coords[i][0];
                    j[1][1] += deta[i] * coords[i][1];
                }
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if det <= 0.0 {
                    return Err(invalid(format!("non-positive Jacobian {det} at Gauss point")));
                }
                let inv = [
                    [j[1][1] / det, -j[0][1] / det],
                    [-j[1][0] / det, j[0][0] / det],
                ];
                let mut bmat = DMatrix::zeros(3, 8);
                for i in 0..4 {
                    let dx = inv[0][0] * dxi[i] + inv[0][1] * deta[i];
                    let dy = inv[1][0] * dxi[i] + inv[1][1] * deta[i];
                    bmat[(0, 2 * i)] = dx;
                    bmat[(1, 2 * i + 1)] = dy;
                    bmat[(2, 2 * i)] = dy;
                    bmat[(2, 2 * i + 1)] = dx;
                }
                let n = [
                    0.25 * (1.0 - xi) * (1.0 - eta),
                    0.25 * (1.0 + xi) * (1.0 - eta),
                    0.25 * (1.0 + xi) * (1.0 + eta),
                    0.25 * (1.0 - xi) * (1.0 + eta),
                ];
                let mut point = [0.0; 2];
                for i in 0..4 {
                    point[0] += n[i] * coords[i][0];
                    point[1] += n[i] * coords[i][1];
                }
                ips.push(IpEntry {
                    element: index,
                    dofs: dofs.clone(),
                    b: bmat.clone(),
                    weight: det,
                    coords: point,
                });
            }
            Ok(ips)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::parse_mesh;
    use approx::assert_relative_eq;

    #[test]
    fn tapered_section_matches_profile_at_key_points() {
        let section = BarSection::tapered(TAPERED_BAR_LENGTH);
        assert_relative_eq!(section.area(0.0), 0.8, max_relative = 1e-14);
        assert_relative_eq!(section.area(TAPERED_BAR_LENGTH), 0.8, max_relative = 1e-14);
        // Waist: A(6) = 0.8 - 2 (0.0534*6 - 0.000418*36).
        assert_relative_eq!(section.area(6.0), 0.189296, max_relative = 1e-12);
        // Mirror symmetry about the midpoint.
        assert_relative_eq!(section.area(2.0), section.area(10.0), max_relative = 1e-14);
    }

    #[test]
    fn tapered_section_stays_positive_along_the_bar() {
        let section = BarSection::tapered(TAPERED_BAR_LENGTH);
        for i in 0..=1200 {
            let x = TAPERED_BAR_LENGTH * f64::from(i) / 1200.0;
            assert!(section.area(x) > 0.0, "area must stay positive at x = {x}");
        }
    }

    #[test]
    #[should_panic(expected = "waist")]
    fn overlong_tapered_bar_is_rejected() {
        let _ = BarSection::tapered(16.5);
    }

    #[test]
    fn bar_b_matrix_reproduces_axial_strain() {
        let mesh = parse_mesh("NODES\n0 1.0 0\n1 3.0 0\nELEMENTS\n0 bar2 0 1\n").unwrap();
        let table =
            build_ip_table(&mesh, AnalysisMode::Uniaxial, &BarSection::constant(2.0)).unwrap();
        assert_eq!(table.len(), 1, "one integration point for a bar");
        let ip = &table[0];
        // u = [0, 0.01] over L = 2 gives eps = 0.005.
        let u = nalgebra::DVector::from_row_slice(&[0.0, 0.01]);
        let eps = &ip.b * u;
        assert_relative_eq!(eps[0], 0.005, max_relative = 1e-14);
        // weight = L * A = 2 * 2.
        assert_relative_eq!(ip.weight, 4.0, max_relative = 1e-14);
        assert_relative_eq!(ip.coords[0], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn triangle_b_matrix_reproduces_a_linear_field() {
        // Unit right triangle; impose u_x = 0.002 x, u_y = -0.001 y,
        // plus a shear combination, and read the strains back.
        let mesh = parse_mesh("NODES\n0 0 0\n1 1 0\n2 0 1\nELEMENTS\n0 tri3 0 1 2\n").unwrap();
        let table =
            build_ip_table(&mesh, AnalysisMode::PlaneStrain, &BarSection::default()).unwrap();
        let ip = &table[0];
        let field = |x: f64, y: f64| [0.002 * x + 0.003 * y, -0.001 * y + 0.001 * x];
        let mut u = nalgebra::DVector::zeros(6);
        for (i, &[x, y]) in mesh.nodes.iter().enumerate() {
            let [ux, uy] = field(x, y);
            u[2 * i] = ux;
            u[2 * i + 1] = uy;
        }
        let eps = &ip.b * u;
        assert_relative_eq!(eps[0], 0.002, max_relative = 1e-12);
        assert_relative_eq!(eps[1], -0.001, max_relative = 1e-12);
        // Engineering shear: gamma = du_x/dy + du_y/dx = 0.003 + 0.001.
        assert_relative_eq!(eps[2], 0.004, max_relative = 1e-12);
        assert_relative_eq!(ip.weight, 0.5, max_relative = 1e-14, );
    }

    #[test]
    fn quad_integration_weights_sum_to_the_area() {
        // A skewed quadrilateral: weights must still sum to its area.
        let mesh = parse_mesh(
            "NODES\n0 0 0\n1 2 0.2\n2 2.3 1.4\n3 -0.1 1.1\nELEMENTS\n0 quad4 0 1 2 3\n",
        )
        .unwrap();
        let table =
            build_ip_table(&mesh, AnalysisMode::PlaneStrain, &BarSection::default()).unwrap();
        assert_eq!(table.len(), 4, "2x2 Gauss rule");
        let total: f64 = table.iter().map(|ip| ip.weight).sum();
        // Shoelace area of the quadrilateral.
        let n = [[0.0, 0.0], [2.0, 0.2], [2.3, 1.4], [-0.1, 1.1]];
        let mut area = 0.0;
        for i in 0..4 {
            let j = (i + 1) % 4;
            area += n[i][0] * n[j][1] - n[j][0] * n[i][1];
        }
        area *= 0.5;
        assert_relative_eq!(total, area, max_relative = 1e-12);
    }

    #[test]
    fn quad_b_matrix_reproduces_a_linear_field() {
        let mesh = parse_mesh(
            "NODES\n0 0 0\n1 2 0.2\n2 2.3 1.4\n3 -0.1 1.1\nELEMENTS\n0 quad4 0 1 2 3\n",
        )
        .unwrap();
        let table =
            build_ip_table(&mesh, AnalysisMode::PlaneStrain, &BarSection::default()).unwrap();
        let field = |x: f64, y: f64| [0.004 * x - 0.002 * y, 0.001 * x + 0.0025 * y];
        let mut u = nalgebra::DVector::zeros(8);
        for (i, &[x, y]) in mesh.nodes.iter().enumerate() {
            let [ux, uy] = field(x, y);
            u[2 * i] = ux;
            u[2 * i + 1] = uy;
        }
        for ip in &table {
            let eps = &ip.b * &u;
            assert_relative_eq!(eps[0], 0.004, max_relative = 1e-12);
            assert_relative_eq!(eps[1], 0.0025, max_relative = 1e-12);
            assert_relative_eq!(eps[2], -0.002 + 0.001, max_relative = 1e-10);
        }
    }

    #[test]
    fn bars_are_rejected_outside_uniaxial_mode() {
        let mesh = parse_mesh("NODES\n0 0 0\n1 1 0\nELEMENTS\n0 bar2 0 1\n").unwrap();
        let err = build_ip_table(&mesh, AnalysisMode::PlaneStrain, &BarSection::default())
            .expect_err("bars need uniaxial mode");
        assert!(matches!(err, FemError::Config(_)), "got {err:?}");
    }
}
