//! Periodic homogenization on a representative volume element.
//!
//! The micro displacement field is decomposed into a linear part driven by
//! the macro strain and a periodic fluctuation, `u = eps_bar . x + u~`,
//! with `u~` equal on opposite boundary nodes (Geers, Kouznetsova &
//! Brekelmans, J. Comput. Appl. Math. 234, 2010).  Periodicity is imposed
//! by master–slave elimination: every slave boundary dof is tied to its
//! master partner, the four cell corners are tied to the pinned origin
//! corner (which also removes rigid-body modes), and the micro Newton loop
//! runs on the remaining reduced unknowns.
//!
//! After the micro equilibrium converges:
//!
//! * the macro stress is the volume average of the micro stresses, and
//! * the macro consistent tangent comes from a probing operator: for each
//!   unit macro-strain perturbation, one linear solve with the factored
//!   converged micro stiffness yields the displacement sensitivity, whose
//!   volume-averaged stress sensitivity is one tangent column.
//!
//! [`RveMaterial`] wraps the whole cell behind the [`Material`] trait, so
//! a homogenized point plugs into the macro solver (or an adaptive
//! surrogate) exactly like a closed-form law — this is the full-order
//! model a two-scale analysis pays for, and the unit being counted when
//! reduction ratios are reported.

use nalgebra::{DMatrix, DVector};

use super::elements::{build_ip_table, BarSection, IpEntry};
use super::mesh::Mesh;
use super::FemError;
use crate::materials::{AnalysisMode, Material, MaterialError, StressTangent};

/// Constituent phase of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Bulk matrix material.
    Matrix,
    /// Fiber inclusion.
    Fiber,
}

/// A circular fiber inclusion.
#[derive(Debug, Clone, Copy)]
pub struct Fiber {
    /// Centre x.
    pub cx: f64,
    /// Centre y.
    pub cy: f64,
    /// Radius.
    pub r: f64,
}

/// Assigns a phase to every element by centroid lookup against the fiber
/// circles (staircase approximation of the inclusion boundary).
pub fn assign_phases(mesh: &Mesh, fibers: &[Fiber]) -> Vec<Phase> {
    mesh.elements
        .iter()
        .map(|element| {
            let n = element.nodes.len() as f64;
            let c = element.nodes.iter().fold([0.0, 0.0], |acc, &i| {
                [acc[0] + mesh.nodes[i][0] / n, acc[1] + mesh.nodes[i][1] / n]
            });
            let inside = fibers
                .iter()
                .any(|f| (c[0] - f.cx).powi(2) + (c[1] - f.cy).powi(2) < f.r * f.r);
            if inside {
                Phase::Fiber
            } else {
                Phase::Matrix
            }
        })
        .collect()
}

/// How a node's fluctuation enters the reduced system.
#[derive(Debug, Clone, Copy)]
enum NodeRep {
    /// Owns reduced node index `k`.
    Own(usize),
    /// Tied to the fluctuation of a master node.
    Tied(usize),
    /// Fluctuation pinned to zero (the origin corner).
    Fixed,
}

/// Periodic micro boundary-value problem with homogenized output.
pub struct RveProblem {
    mesh: Mesh,
    fibers: Vec<Fiber>,
    phases: Vec<Phase>,
    matrix_template: Box<dyn Material>,
    fiber_template: Box<dyn Material>,
    ip_table: Vec<IpEntry>,
    materials: Vec<Box<dyn Material>>,
    volume: f64,
    /// Reduced node index per mesh node (resolved through ties).
    node_target: Vec<Option<usize>>,
    /// `(slave, master)` node pairs, for diagnostics and tests.
    pairs: Vec<(usize, usize)>,
    n_red: usize,
    /// Relative residual tolerance of the micro Newton loop.
    pub micro_rel_tol: f64,
    /// Iteration cap of the micro Newton loop.
    pub micro_max_iterations: usize,
    w_committed: DVector<f64>,
    w_trial: DVector<f64>,
}

impl std::fmt::Debug for RveProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RveProblem")
            .field("n_nodes", &self.mesh.n_nodes())
            .field("n_points", &self.ip_table.len())
            .field("n_fibers", &self.fibers.len())
            .field("n_reduced_nodes", &self.n_red)
            .finish_non_exhaustive()
    }
}

impl RveProblem {
    /// Builds the periodic cell.
    ///
    /// Both templates must be plane-strain laws (three strain components).
    /// The mesh must tile a rectangle with matching discretizations on
    /// opposite edges; anything else fails with a periodicity error.
    pub fn new(
        mesh: Mesh,
        fibers: Vec<Fiber>,
        matrix_template: Box<dyn Material>,
        fiber_template: Box<dyn Material>,
    ) -> Result<Self, FemError> {
        mesh.validate()?;
        for (name, t) in [("matrix", &matrix_template), ("fiber", &fiber_template)] {
            if t.n_strain() != 3 {
                return Err(FemError::Config(format!(
                    "{name} template must be a plane-strain law with 3 strain components, got {}",
                    t.n_strain()
                )));
            }
        }
        let ip_table = build_ip_table(&mesh, AnalysisMode::PlaneStrain, &BarSection::default())?;
        if ip_table.is_empty() {
            return Err(FemError::Config("cell mesh has no elements".into()));
        }
        let phases = assign_phases(&mesh, &fibers);
        let materials: Vec<Box<dyn Material>> = ip_table
            .iter()
            .map(|e| match phases[e.element] {
                Phase::Matrix => matrix_template.clone_pristine(),
                Phase::Fiber => fiber_template.clone_pristine(),
            })
            .collect();
        let volume: f64 = ip_table.iter().map(|e| e.weight).sum();

        let (node_target, pairs, n_red) = build_periodic_map(&mesh)?;
        let n_w = 2 * n_red;
        Ok(RveProblem {
            mesh,
            fibers,
            phases,
            matrix_template,
            fiber_template,
            ip_table,
            materials,
            volume,
            node_target,
            pairs,
            n_red,
            micro_rel_tol: 1e-9,
            micro_max_iterations: 30,
            w_committed: DVector::zeros(n_w),
            w_trial: DVector::zeros(n_w),
        })
    }

    /// Cell volume (area times unit thickness).
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Number of micro integration points.
    pub fn n_points(&self) -> usize {
        self.ip_table.len()
    }

    /// Element phases, in element order.
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// `(slave, master)` periodic node pairs.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Fluctuation displacement of a node in the trial state.
    pub fn fluctuation(&self, node: usize) -> [f64; 2] {
        match self.node_target[node] {
            Some(k) => [self.w_trial[2 * k], self.w_trial[2 * k + 1]],
            None => [0.0, 0.0],
        }
    }

    /// Volume-averaged committed equivalent plastic strain.
    pub fn avg_eps_p_eq(&self) -> f64 {
        self.ip_table
            .iter()
            .zip(&self.materials)
            .map(|(e, m)| e.weight * m.eps_p_eq())
            .sum::<f64>()
            / self.volume
    }

    /// Volume-averaged trial equivalent plastic strain.
    pub fn avg_trial_eps_p_eq(&self) -> f64 {
        self.ip_table
            .iter()
            .zip(&self.materials)
            .map(|(e, m)| e.weight * m.trial_eps_p_eq())
            .sum::<f64>()
            / self.volume
    }

    /// Affine displacement field from a macro strain (Voigt, engineering
    /// shear): `u = eps . x` with `eps_xy = gamma / 2`.
    fn affine_field(&self, macro_eps: &DVector<f64>) -> DVector<f64> {
        let (exx, eyy, hxy) = (macro_eps[0], macro_eps[1], 0.5 * macro_eps[2]);
        let mut u = DVector::zeros(2 * self.mesh.n_nodes());
        for (n, &[x, y]) in self.mesh.nodes.iter().enumerate() {
            u[2 * n] = exx * x + hxy * y;
            u[2 * n + 1] = hxy * x + eyy * y;
        }
        u
    }

    /// Expands reduced fluctuations to a full-size fluctuation field.
    fn expand(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(2 * self.mesh.n_nodes());
        for n in 0..self.mesh.n_nodes() {
            if let Some(k) = self.node_target[n] {
                u[2 * n] = w[2 * k];
                u[2 * n + 1] = w[2 * k + 1];
            }
        }
        u
    }

    /// Folds a full-size vector into the reduced space (transpose of the
    /// tying map).
    fn fold(&self, full: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.n_red);
        for n in 0..self.mesh.n_nodes() {
            if let Some(k) = self.node_target[n] {
                r[2 * k] += full[2 * n];
                r[2 * k + 1] += full[2 * n + 1];
            }
        }
        r
    }

    /// Folds the full stiffness into the reduced space.
    fn fold_matrix(&self, k_full: &DMatrix<f64>) -> DMatrix<f64> {
        let n_nodes = self.mesh.n_nodes();
        let mut k_red = DMatrix::zeros(2 * self.n_red, 2 * self.n_red);
        for n1 in 0..n_nodes {
            let Some(k1) = self.node_target[n1] else { continue };
            for n2 in 0..n_nodes {
                let Some(k2) = self.node_target[n2] else { continue };
                for c1 in 0..2 {
                    for c2 in 0..2 {
                        k_red[(2 * k1 + c1, 2 * k2 + c2)] +=
                            k_full[(2 * n1 + c1, 2 * n2 + c2)];
                    }
                }
            }
        }
        k_red
    }

    /// Assembles micro internal forces, stiffness, and per-point stress
    /// and tangent at displacement state `u`.
    #[allow(clippy::type_complexity)]
    fn assemble(
        &mut self,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>), MaterialError>
    {
        let n = 2 * self.mesh.n_nodes();
        let mut f_int = DVector::zeros(n);
        let mut k_full = DMatrix::zeros(n, n);
        let mut stresses = Vec::with_capacity(self.ip_table.len());
        let mut tangents = Vec::with_capacity(self.ip_table.len());
        for (ip, entry) in self.ip_table.iter().enumerate() {
            let u_e = DVector::from_fn(entry.dofs.len(), |i, _| u[entry.dofs[i]]);
            let eps = &entry.b * u_e;
            let st = self.materials[ip].update(&eps)?;
            let f_e = entry.b.transpose() * &st.stress * entry.weight;
            let k_e = entry.b.transpose() * &st.tangent * &entry.b * entry.weight;
            for (i, &di) in entry.dofs.iter().enumerate() {
                f_int[di] += f_e[i];
                for (j, &dj) in entry.dofs.iter().enumerate() {
                    k_full[(di, dj)] += k_e[(i, j)];
                }
            }
            stresses.push(st.stress);
            tangents.push(st.tangent);
        }
        Ok((f_int, k_full, stresses, tangents))
    }

    /// Solves the micro equilibrium at `macro_eps` and homogenizes stress
    /// and tangent.
    ///
    /// Micro history is stored as a trial; call [`commit`](Self::commit)
    /// or [`cancel`](Self::cancel) to settle it, mirroring the
    /// [`Material`] protocol.
    pub fn update(&mut self, macro_eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
        if macro_eps.len() != 3 {
            return Err(MaterialError::DimensionMismatch { expected: 3, got: macro_eps.len() });
        }
        if macro_eps.iter().any(|v| !v.is_finite()) {
            return Err(MaterialError::NonFinite);
        }
        let affine = self.affine_field(macro_eps);
        // Warm start from the previous trial: successive macro iterations
        // move the strain only slightly.
        let mut w = self.w_trial.clone();
        let mut ref_norm: Option<f64> = None;
        let mut converged: Option<(DMatrix<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> = None;

        for iteration in 0..=self.micro_max_iterations {
            let u = &affine + self.expand(&w);
            let (f_int, k_full, stresses, tangents) = self.assemble(&u)?;
            let r = self.fold(&f_int);
            let norm = r.norm();
            if !norm.is_finite() {
                return Err(MaterialError::MicroDiverged { residual: norm });
            }
            let reference = *ref_norm.get_or_insert(norm);
            let floor = 1e-10 * (1.0 + f_int.norm());
            if norm <= (self.micro_rel_tol * reference).max(floor) {
                converged = Some((k_full, stresses, tangents));
                break;
            }
            if iteration == self.micro_max_iterations {
                return Err(MaterialError::MicroDiverged { residual: norm });
            }
            let k_red = self.fold_matrix(&k_full);
            let dw = k_red
                .lu()
                .solve(&(-&r))
                .ok_or(MaterialError::MicroDiverged { residual: norm })?;
            w += dw;
        }
        let (k_full, stresses, tangents) =
            converged.expect("loop either converges or returns an error");
        self.w_trial = w;

        // Volume-averaged stress.
        let mut stress = DVector::zeros(3);
        for (entry, s) in self.ip_table.iter().zip(&stresses) {
            stress += s * (entry.weight / self.volume);
        }

        // Probing tangent: one linear solve per unit macro strain with the
        // factored converged stiffness.
        let factor = if self.n_red > 0 { Some(self.fold_matrix(&k_full).lu()) } else { None };
        let mut tangent = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut unit = DVector::zeros(3);
            unit[j] = 1.0;
            let g = self.affine_field(&unit);
            let chi = if let Some(factor) = &factor {
                let rhs = -self.fold(&(&k_full * &g));
                let v = factor
                    .solve(&rhs)
                    .ok_or(MaterialError::MicroDiverged { residual: f64::NAN })?;
                &g + self.expand(&v)
            } else {
                g
            };
            for (ip, entry) in self.ip_table.iter().enumerate() {
                let chi_e = DVector::from_fn(entry.dofs.len(), |i, _| chi[entry.dofs[i]]);
                let sens = &tangents[ip] * (&entry.b * chi_e);
                for i in 0..3 {
                    tangent[(i, j)] += sens[i] * entry.weight / self.volume;
                }
            }
        }

        if stress.iter().any(|v| !v.is_finite()) || tangent.iter().any(|v: &f64| !v.is_finite()) {
            return Err(MaterialError::MicroDiverged { residual: f64::NAN });
        }
        Ok(StressTangent { stress, tangent })
    }

    /// Commits micro history (materials and fluctuations).
    pub fn commit(&mut self) {
        for m in &mut self.materials {
            m.commit();
        }
        self.w_committed = self.w_trial.clone();
    }

    /// Rolls micro history back to the last commit.
    pub fn cancel(&mut self) {
        for m in &mut self.materials {
            m.cancel();
        }
        self.w_trial = self.w_committed.clone();
    }

    /// A virgin copy of this cell (same mesh, phases and settings, zero
    /// history).
    pub fn clone_pristine(&self) -> RveProblem {
        let mut fresh = RveProblem::new(
            self.mesh.clone(),
            self.fibers.clone(),
            self.matrix_template.clone_pristine(),
            self.fiber_template.clone_pristine(),
        )
        .expect("an existing cell rebuilds cleanly");
        fresh.micro_rel_tol = self.micro_rel_tol;
        fresh.micro_max_iterations = self.micro_max_iterations;
        fresh
    }
}

/// Homogenized update of a periodic cell (volume-averaged stress, probing
/// tangent); convenience wrapper around [`RveProblem::update`].
pub fn rve_homogenized_update(
    rve: &mut RveProblem,
    macro_eps: &DVector<f64>,
) -> Result<StressTangent, MaterialError> {
    rve.update(macro_eps)
}

/// Builds the periodic master–slave map: returns the reduced node target
/// per node, the slave/master pairs, and the reduced node count.
#[allow(clippy::type_complexity)]
fn build_periodic_map(
    mesh: &Mesh,
) -> Result<(Vec<Option<usize>>, Vec<(usize, usize)>, usize), FemError> {
    let err = |message: String| FemError::Periodicity(message);
    let n_nodes = mesh.n_nodes();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &[x, y] in &mesh.nodes {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let tol = 1e-9 * ((x1 - x0) + (y1 - y0));

    let near = |a: f64, b: f64| (a - b).abs() < tol;
    let mut corner = [None; 4]; // c00, c10, c01, c11
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for (n, &[x, y]) in mesh.nodes.iter().enumerate() {
        let (l, r, b, t) = (near(x, x0), near(x, x1), near(y, y0), near(y, y1));
        match (l, r, b, t) {
            (true, _, true, _) => corner[0] = Some(n),
            (_, true, true, _) => corner[1] = Some(n),
            (true, _, _, true) => corner[2] = Some(n),
            (_, true, _, true) => corner[3] = Some(n),
            (true, _, _, _) => left.push(n),
            (_, true, _, _) => right.push(n),
            (_, _, true, _) => bottom.push(n),
            (_, _, _, true) => top.push(n),
            _ => {}
        }
    }
    let [c00, c10, c01, c11] = corner;
    let (c00, c10, c01, c11) = match (c00, c10, c01, c11) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(err("cell must have nodes at all four rectangle corners".into())),
    };

    let sort_by = |nodes: &mut Vec<usize>, axis: usize| {
        nodes.sort_by(|&a, &b| mesh.nodes[a][axis].total_cmp(&mesh.nodes[b][axis]));
    };
    sort_by(&mut left, 1);
    sort_by(&mut right, 1);
    sort_by(&mut bottom, 0);
    sort_by(&mut top, 0);
    if left.len() != right.len() {
        return Err(err(format!(
            "left/right edges have {} vs {} interior nodes",
            left.len(),
            right.len()
        )));
    }
    if bottom.len() != top.len() {
        return Err(err(format!(
            "bottom/top edges have {} vs {} interior nodes",
            bottom.len(),
            top.len()
        )));
    }

    let mut pairs = Vec::new();
    for (&m, &s) in left.iter().zip(&right) {
        if !near(mesh.nodes[m][1], mesh.nodes[s][1]) {
            return Err(err(format!(
                "left node {m} (y = {}) has no right partner at the same height",
                mesh.nodes[m][1]
            )));
        }
        pairs.push((s, m));
    }
    for (&m, &s) in bottom.iter().zip(&top) {
        if !near(mesh.nodes[m][0], mesh.nodes[s][0]) {
            return Err(err(format!(
                "bottom node {m} (x = {}) has no top partner at the same abscissa",
                mesh.nodes[m][0]
            )));
        }
        pairs.push((s, m));
    }
    for s in [c10, c01, c11] {
        pairs.push((s, c00));
    }

    let mut rep = vec![NodeRep::Fixed; n_nodes];
    for n in 0..n_nodes {
        rep[n] = NodeRep::Own(usize::MAX); // provisional; re-indexed below
    }
    rep[c00] = NodeRep::Fixed;
    for &(slave, master) in &pairs {
        rep[slave] = NodeRep::Tied(master);
    }
    // Assign dense reduced indices to owners.
    let mut n_red = 0;
    for r in rep.iter_mut() {
        if let NodeRep::Own(k) = r {
            *k = n_red;
            n_red += 1;
        }
    }
    // Resolve targets through at most one tie (masters are never slaves).
    let mut node_target = vec![None; n_nodes];
    for n in 0..n_nodes {
        node_target[n] = match rep[n] {
            NodeRep::Own(k) => Some(k),
            NodeRep::Fixed => None,
            NodeRep::Tied(m) => match rep[m] {
                NodeRep::Own(k) => Some(k),
                NodeRep::Fixed => None,
                NodeRep::Tied(_) => {
                    return Err(err(format!("chained periodic tie through node {m}")));
                }
            },
        };
    }
    Ok((node_target, pairs, n_red))
}

/// A periodic cell exposed as a macro-scale [`Material`].
///
/// In plane strain the macro strain passes straight through; in uniaxial
/// mode the single strain component drives `eps_bar = (eps, 0, 0)` (a
/// laterally confined composite bar) and the law returns the `xx`
/// components of the homogenized stress and tangent.
pub struct RveMaterial {
    problem: RveProblem,
    mode: AnalysisMode,
}

impl RveMaterial {
    /// Wraps a cell for the given macro analysis mode (plane strain or
    /// uniaxial).
    pub fn new(problem: RveProblem, mode: AnalysisMode) -> Result<Self, FemError> {
        if mode == AnalysisMode::PlaneStress {
            return Err(FemError::Config(
                "homogenized cells support plane-strain and uniaxial macro modes".into(),
            ));
        }
        Ok(RveMaterial { problem, mode })
    }

    /// The underlying cell.
    pub fn problem(&self) -> &RveProblem {
        &self.problem
    }
}

impl Material for RveMaterial {
    fn n_strain(&self) -> usize {
        self.mode.n_components()
    }

    fn update(&mut self, eps: &DVector<f64>) -> Result<StressTangent, MaterialError> {
        match self.mode {
            AnalysisMode::PlaneStrain => self.problem.update(eps),
            AnalysisMode::Uniaxial => {
                if eps.len() != 1 {
                    return Err(MaterialError::DimensionMismatch { expected: 1, got: eps.len() });
                }
                let macro_eps = DVector::from_row_slice(&[eps[0], 0.0, 0.0]);
                let st = self.problem.update(&macro_eps)?;
                Ok(StressTangent {
                    stress: DVector::from_row_slice(&[st.stress[0]]),
                    tangent: DMatrix::from_row_slice(1, 1, &[st.tangent[(0, 0)]]),
                })
            }
            AnalysisMode::PlaneStress => unreachable!("rejected at construction"),
        }
    }

    fn commit(&mut self) {
        self.problem.commit();
    }

    fn cancel(&mut self) {
        self.problem.cancel();
    }

    fn eps_p_eq(&self) -> f64 {
        self.problem.avg_eps_p_eq()
    }

    fn trial_eps_p_eq(&self) -> f64 {
        self.problem.avg_trial_eps_p_eq()
    }

    fn clone_pristine(&self) -> Box<dyn Material> {
        Box::new(RveMaterial { problem: self.problem.clone_pristine(), mode: self.mode })
    }
}
