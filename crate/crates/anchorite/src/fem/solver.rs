//! Displacement-driven nonlinear solution loop with constitutive hooks.
//!
//! A [`FemModel`] advances a quasi-static analysis step by step.  Inside a
//! step, Newton iterations minimize the global force residual; the strain
//! at every integration point is pushed through the `material_update` hook,
//! which returns the stress and consistent tangent that are assembled into
//! the internal force vector and stiffness matrix (de Souza Neto, Perić &
//! Owen, *Computational Methods for Plasticity*, ch. 4).
//!
//! Once an equilibrium candidate is found, the `check_solution` hook issues
//! a [`Verdict`]: accept the step (history is committed), reject it but
//! continue searching with an updated constitutive state, restart the step
//! from the last committed displacements, or cancel the step outright.  A
//! cancelled step is re-attempted with the same size after the `cancel`
//! hook has rolled the constitutive state back; too many consecutive
//! cancels abort with [`FemError::StepFailed`].  This verdict-driven loop
//! is what lets an adaptive constitutive model interleave its own training
//! with the equilibrium search.

use std::collections::BTreeMap;

use nalgebra::DVector;

use super::elements::{build_ip_table, dofs_per_node, BarSection, IpEntry};
use super::linsys::{StiffnessFactor, StiffnessMatrix};
use super::mesh::Mesh;
use super::{FemError, HookError};
use crate::materials::{AnalysisMode, Material, MaterialError, StressTangent};

/// Outcome of a `check_solution` hook (or of a failed equilibrium search).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Solution accepted; history is committed and the step ends.
    Accept,
    /// Solution rejected; keep searching for equilibrium in the same step
    /// with the updated constitutive state.
    RejectContinue,
    /// Solution rejected; restart the search from the last committed
    /// displacements (used when the constitutive model re-initializes
    /// itself during the first step).
    RejectRestartFirstStep,
    /// Step cancelled; constitutive state is rolled back and the step is
    /// re-attempted.
    Cancel,
}

/// Constitutive callbacks driving and auditing the solution loop.
///
/// `strains` slices are indexed by global integration-point id, in the
/// element-major order reported by [`FemModel::point_coords`].
pub trait ConstitutiveHooks {
    /// Stress and consistent tangent at integration point `point` for the
    /// trial strain `eps`.  Called exactly once per point per assembly.
    fn material_update(
        &mut self,
        point: usize,
        eps: &DVector<f64>,
    ) -> Result<StressTangent, HookError>;

    /// Judges a converged equilibrium candidate for `step`.
    fn check_solution(
        &mut self,
        step: usize,
        strains: &[DVector<f64>],
    ) -> Result<Verdict, HookError>;

    /// Commits constitutive history after an accepted step.
    fn commit(&mut self, step: usize, strains: &[DVector<f64>]) -> Result<(), HookError>;

    /// Rolls constitutive state back after a cancelled step; `strains`
    /// holds the last committed equilibrium strains.
    fn cancel(&mut self, strains: &[DVector<f64>]) -> Result<(), HookError>;
}

/// Plain full-order hooks: one material instance per integration point,
/// every candidate accepted.  Doubles as the reference-run driver and as
/// the baseline the adaptive hooks are compared against.
pub struct FullOrderHooks {
    materials: Vec<Box<dyn Material>>,
    n_updates: u64,
}

impl FullOrderHooks {
    /// One pristine clone of `template` per integration point.
    pub fn new(template: &dyn Material, n_points: usize) -> Self {
        FullOrderHooks {
            materials: (0..n_points).map(|_| template.clone_pristine()).collect(),
            n_updates: 0,
        }
    }

    /// Material bound to an integration point.
    pub fn material(&self, point: usize) -> &dyn Material {
        self.materials[point].as_ref()
    }

    /// Total number of material updates performed so far.  For a
    /// homogenized material each update is one full micro solve, which is
    /// what reduction ratios are measured against.
    pub fn n_updates(&self) -> u64 {
        self.n_updates
    }
}

impl ConstitutiveHooks for FullOrderHooks {
    fn material_update(
        &mut self,
        point: usize,
        eps: &DVector<f64>,
    ) -> Result<StressTangent, HookError> {
        self.n_updates += 1;
        self.materials[point]
            .update(eps)
            .map_err(|source| HookError::Material { point, source })
    }

    fn check_solution(
        &mut self,
        _step: usize,
        _strains: &[DVector<f64>],
    ) -> Result<Verdict, HookError> {
        Ok(Verdict::Accept)
    }

    fn commit(&mut self, _step: usize, _strains: &[DVector<f64>]) -> Result<(), HookError> {
        for m in &mut self.materials {
            m.commit();
        }
        Ok(())
    }

    fn cancel(&mut self, _strains: &[DVector<f64>]) -> Result<(), HookError> {
        for m in &mut self.materials {
            m.cancel();
        }
        Ok(())
    }
}

/// Newton strategy within one equilibrium search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Reassemble and refactorize the tangent every iteration.
    #[default]
    FullNewton,
    /// Factorize the tangent once per equilibrium search and reuse it
    /// (modified Newton–Raphson); the residual is still exact.
    Secant,
}

/// A prescribed displacement on a node group, ramped linearly over the
/// analysis: at step `s` of `n`, the applied value is `total (s + 1) / n`.
#[derive(Debug, Clone)]
pub struct PrescribedDisplacement {
    /// Node group the constraint applies to.
    pub group: String,
    /// Displacement component (0 = x, 1 = y).
    pub component: usize,
    /// Value reached at the final step.
    pub total: f64,
}

/// A nodal load resultant on a node group, ramped like the displacements
/// and split equally over the group's nodes.
#[derive(Debug, Clone)]
pub struct PrescribedLoad {
    /// Node group the load applies to.
    pub group: String,
    /// Force component (0 = x, 1 = y).
    pub component: usize,
    /// Resultant reached at the final step.
    pub total: f64,
}

/// Newton solver configuration.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Number of equally sized load steps.
    pub steps: usize,
    /// Displacement-controlled boundary conditions.
    pub displacements: Vec<PrescribedDisplacement>,
    /// Load-controlled boundary conditions.
    pub loads: Vec<PrescribedLoad>,
    /// Relative residual tolerance, measured against the first residual of
    /// the current equilibrium search.
    pub rel_tol: f64,
    /// Absolute residual floor; convergence is declared when the residual
    /// drops below `max(rel_tol * reference, abs_tol)`.
    pub abs_tol: f64,
    /// Maximum Newton iterations per equilibrium search.
    pub max_iterations: usize,
    /// Tangent reuse strategy.
    pub strategy: Strategy,
    /// Consecutive cancelled attempts tolerated before the step fails.
    pub max_cancels: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps: 1,
            displacements: Vec::new(),
            loads: Vec::new(),
            rel_tol: 1e-6,
            abs_tol: 1e-10,
            max_iterations: 25,
            strategy: Strategy::FullNewton,
            max_cancels: 5,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), FemError> {
        if self.steps == 0 {
            return Err(FemError::Config("step count must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(FemError::Config(format!(
                "residual tolerances must be positive, got rel {} abs {}",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(FemError::Config("max_iterations must be at least 1".into()));
        }
        if self.max_cancels == 0 {
            return Err(FemError::Config("max_cancels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Record of one solved step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Step index.
    pub step: usize,
    /// Whether the final equilibrium search converged (always true for an
    /// outcome returned without error).
    pub converged: bool,
    /// Total Newton iterations spent in the step, over all searches and
    /// attempts.
    pub iterations: usize,
    /// Verdicts in the order they were issued — exactly one per completed
    /// solve attempt, ending with [`Verdict::Accept`] on success.
    pub verdicts: Vec<Verdict>,
    /// Number of cancelled attempts within the step.
    pub cancels: usize,
    /// Number of reject verdicts (continue or restart) within the step.
    pub rejections: usize,
    /// Reaction-force resultants per displacement-controlled group and
    /// component, from the converged internal forces.
    pub reactions: BTreeMap<String, Vec<f64>>,
}

enum Search {
    Converged { f_int: DVector<f64>, strains: Vec<DVector<f64>> },
    Cancelled,
}

/// Result of one assembly pass.
pub struct Assembled {
    /// Full-size residual `f_int - f_ext`.
    pub residual: DVector<f64>,
    /// Full-size internal force vector.
    pub f_int: DVector<f64>,
    /// Tangent matrix reduced to the free dofs.
    pub stiffness: StiffnessMatrix,
    /// Free–constrained tangent block contracted with the prescribed
    /// displacement increment (zero unless an increment was supplied).
    pub coupling: DVector<f64>,
    /// Strain vector per integration point, element-major.
    pub strains: Vec<DVector<f64>>,
}

/// Mesh, dof bookkeeping, boundary conditions and the step loop.
pub struct FemModel {
    mesh: Mesh,
    mode: AnalysisMode,
    config: SolverConfig,
    ip_table: Vec<IpEntry>,
    n_dofs: usize,
    /// Constrained dofs with their full-ramp target values, sorted by dof.
    constraints: Vec<(usize, f64)>,
    /// External load vector at full ramp.
    unit_f_ext: DVector<f64>,
    /// Free dof indices (ascending) and the inverse map full -> compressed.
    free: Vec<usize>,
    free_map: Vec<Option<usize>>,
    /// Bandwidth of the free-dof stiffness matrix.
    bandwidth: usize,
    /// Committed nodal displacements.
    u: DVector<f64>,
    /// Committed equilibrium strains per integration point.
    committed_strains: Vec<DVector<f64>>,
    /// Next step to solve.
    step: usize,
    outcomes: Vec<StepOutcome>,
}

impl FemModel {
    /// Builds a model from a validated mesh.
    ///
    /// `section` is only consulted by bar elements; pass
    /// `BarSection::default()` for two-dimensional meshes.
    pub fn new(
        mesh: Mesh,
        mode: AnalysisMode,
        section: BarSection,
        config: SolverConfig,
    ) -> Result<Self, FemError> {
        mesh.validate()?;
        config.validate()?;
        let dpn = dofs_per_node(mode);
        let n_dofs = mesh.n_nodes() * dpn;
        let ip_table = build_ip_table(&mesh, mode, &section)?;
        if ip_table.is_empty() {
            return Err(FemError::Config("mesh has no elements".into()));
        }

        let mut constraints: BTreeMap<usize, f64> = BTreeMap::new();
        for d in &config.displacements {
            if d.component >= dpn {
                return Err(FemError::Config(format!(
                    "displacement component {} out of range for {mode:?}",
                    d.component
                )));
            }
            for &node in mesh.group(&d.group)? {
                let dof = node * dpn + d.component;
                if constraints.insert(dof, d.total).is_some() {
                    return Err(FemError::Config(format!(
                        "dof {dof} (node {node}, component {}) constrained twice",
                        d.component
                    )));
                }
            }
        }

        let mut unit_f_ext = DVector::zeros(n_dofs);
        for l in &config.loads {
            if l.component >= dpn {
                return Err(FemError::Config(format!(
                    "load component {} out of range for {mode:?}",
                    l.component
                )));
            }
            let nodes = mesh.group(&l.group)?;
            let per_node = l.total / nodes.len() as f64;
            for &node in nodes {
                unit_f_ext[node * dpn + l.component] += per_node;
            }
        }

        let mut free_map = vec![None; n_dofs];
        let mut free = Vec::with_capacity(n_dofs - constraints.len());
        for dof in 0..n_dofs {
            if !constraints.contains_key(&dof) {
                free_map[dof] = Some(free.len());
                free.push(dof);
            }
        }
        if free.is_empty() {
            return Err(FemError::Config("all dofs are constrained".into()));
        }

        // Bandwidth of the compressed system: compressed indices can only
        // shrink gaps, so the span over each element's free dofs bounds it.
        let mut bandwidth = 0usize;
        for entry in &ip_table {
            let compressed: Vec<usize> =
                entry.dofs.iter().filter_map(|&d| free_map[d]).collect();
            if let (Some(&lo), Some(&hi)) = (compressed.iter().min(), compressed.iter().max()) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }

        let dim = mode.n_components();
        let n_points = ip_table.len();
        Ok(FemModel {
            mesh,
            mode,
            config,
            ip_table,
            n_dofs,
            constraints: constraints.into_iter().collect(),
            unit_f_ext,
            free,
            free_map,
            bandwidth,
            u: DVector::zeros(n_dofs),
            committed_strains: vec![DVector::zeros(dim); n_points],
            step: 0,
            outcomes: Vec::new(),
        })
    }

    /// Analysis mode the model was built with.
    pub fn mode(&self) -> AnalysisMode {
        self.mode
    }

    /// The underlying mesh.
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Solver configuration.
    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Total number of displacement dofs.
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Number of integration points (constitutive points).
    pub fn n_points(&self) -> usize {
        self.ip_table.len()
    }

    /// Spatial coordinates of every integration point, element-major.
    pub fn point_coords(&self) -> Vec<[f64; 2]> {
        self.ip_table.iter().map(|e| e.coords).collect()
    }

    /// Element owning each integration point.
    pub fn point_elements(&self) -> Vec<usize> {
        self.ip_table.iter().map(|e| e.element).collect()
    }

    /// Committed nodal displacements.
    pub fn displacement(&self) -> &DVector<f64> {
        &self.u
    }

    /// Committed equilibrium strains, one vector per integration point.
    pub fn committed_strains(&self) -> &[DVector<f64>] {
        &self.committed_strains
    }

    /// Outcomes of the steps solved so far.
    pub fn outcomes(&self) -> &[StepOutcome] {
        &self.outcomes
    }

    /// Index of the next step to solve.
    pub fn next_step(&self) -> usize {
        self.step
    }

    /// Global dof index for a node and component.
    pub fn dof(&self, node: usize, component: usize) -> usize {
        node * dofs_per_node(self.mode) + component
    }

    /// Assembles internal forces, residual and the free-dof tangent at
    /// displacement state `u`, invoking the material hook exactly once per
    /// integration point.
    pub fn assemble(
        &self,
        u: &DVector<f64>,
        f_ext: &DVector<f64>,
        hooks: &mut dyn ConstitutiveHooks,
    ) -> Result<Assembled, FemError> {
        self.assemble_with_increment(u, f_ext, None, hooks)
    }

    /// [`Self::assemble`], additionally contracting the free–constrained
    /// tangent block with the prescribed displacement increment `du_c`
    /// (full-size, zero at free dofs) so displacement control can be
    /// applied consistently through the linearization.
    fn assemble_with_increment(
        &self,
        u: &DVector<f64>,
        f_ext: &DVector<f64>,
        du_c: Option<&DVector<f64>>,
        hooks: &mut dyn ConstitutiveHooks,
    ) -> Result<Assembled, FemError> {
        assert_eq!(u.len(), self.n_dofs, "displacement vector length must match dof count");
        let dim = self.mode.n_components();
        let mut f_int = DVector::zeros(self.n_dofs);
        let mut stiffness = StiffnessMatrix::new(self.free.len(), self.bandwidth);
        let mut coupling = DVector::zeros(self.free.len());
        let mut strains = Vec::with_capacity(self.ip_table.len());

        for (point, entry) in self.ip_table.iter().enumerate() {
            let u_e = DVector::from_fn(entry.dofs.len(), |i, _| u[entry.dofs[i]]);
            let eps = &entry.b * u_e;
            let st = hooks.material_update(point, &eps)?;
            debug_assert_eq!(st.stress.len(), dim, "stress dimension from hook");
            debug_assert_eq!(st.tangent.nrows(), dim, "tangent rows from hook");

            let f_e = entry.b.transpose() * &st.stress * entry.weight;
            let k_e = entry.b.transpose() * &st.tangent * &entry.b * entry.weight;
            for (i, &di) in entry.dofs.iter().enumerate() {
                f_int[di] += f_e[i];
                if let Some(ci) = self.free_map[di] {
                    for (j, &dj) in entry.dofs.iter().enumerate() {
                        match self.free_map[dj] {
                            Some(cj) => stiffness.add(ci, cj, k_e[(i, j)]),
                            None => {
                                if let Some(duc) = du_c {
                                    coupling[ci] += k_e[(i, j)] * duc[dj];
                                }
                            }
                        }
                    }
                }
            }
            strains.push(eps);
        }

        Ok(Assembled { residual: &f_int - f_ext, f_int, stiffness, coupling, strains })
    }

    /// Norm of the residual restricted to the free dofs.
    fn free_norm(&self, residual: &DVector<f64>) -> f64 {
        self.free.iter().map(|&d| residual[d] * residual[d]).sum::<f64>().sqrt()
    }

    /// Full-size increment vector carrying each constrained dof from its
    /// value in `uw` to the step target (zero at free dofs).
    fn prescribed_increment(&self, targets: &[(usize, f64)], uw: &DVector<f64>) -> DVector<f64> {
        let mut du_c = DVector::zeros(self.n_dofs);
        for &(dof, value) in targets {
            du_c[dof] = value - uw[dof];
        }
        du_c
    }

    fn reactions(
        &self,
        f_int: &DVector<f64>,
        f_ext: &DVector<f64>,
    ) -> BTreeMap<String, Vec<f64>> {
        let dpn = dofs_per_node(self.mode);
        let mut out = BTreeMap::new();
        for d in &self.config.displacements {
            let name = d.group.clone();
            if out.contains_key(&name) {
                continue;
            }
            let nodes = self.mesh.group(&name).expect("control group validated at build");
            let mut sums = vec![0.0; dpn];
            for &node in nodes {
                for (c, sum) in sums.iter_mut().enumerate() {
                    let dof = node * dpn + c;
                    *sum += f_int[dof] - f_ext[dof];
                }
            }
            out.insert(name, sums);
        }
        out
    }

    /// Classifies hook errors that should cancel the step rather than
    /// abort the analysis: explicit cancellation requests and constitutive
    /// divergence (which a rolled-back re-attempt may cure).
    fn cancels_step(err: &HookError) -> bool {
        match err {
            HookError::CancelRequested { .. } => true,
            HookError::Material { source, .. } => matches!(
                source,
                MaterialError::ReturnMapDiverged { .. } | MaterialError::MicroDiverged { .. }
            ),
            HookError::Failed(_) => false,
        }
    }

    fn equilibrium_search(
        &self,
        uw: &mut DVector<f64>,
        f_ext: &DVector<f64>,
        hooks: &mut dyn ConstitutiveHooks,
        ref_norm: &mut Option<f64>,
        iterations: &mut usize,
        predictor: Option<&DVector<f64>>,
    ) -> Result<Search, FemError> {
        let mut factor: Option<StiffnessFactor> = None;

        // Predictor: apply the prescribed displacement increment through
        // the tangent at the current state, `K_ff du_f = -r_f - K_fc du_c`.
        // Jamming the increment straight into the initial guess instead
        // would concentrate the whole step's strain in the constrained
        // elements, which derails Newton for strongly nonlinear steps.
        if let Some(du_c) = predictor {
            let assembled = match self.assemble_with_increment(uw, f_ext, Some(du_c), hooks) {
                Ok(a) => a,
                Err(FemError::Hook(e)) if Self::cancels_step(&e) => return Ok(Search::Cancelled),
                Err(e) => return Err(e),
            };
            *iterations += 1;
            let f = match assembled.stiffness.factorize() {
                Ok(f) => Some(f),
                Err(FemError::LinearSolve(_)) => return Ok(Search::Cancelled),
                Err(e) => return Err(e),
            };
            let rhs = DVector::from_fn(self.free.len(), |i, _| {
                -assembled.residual[self.free[i]] - assembled.coupling[i]
            });
            let du = match f.as_ref().expect("factor just built").solve(&rhs) {
                Ok(du) => du,
                Err(FemError::LinearSolve(_)) => return Ok(Search::Cancelled),
                Err(e) => return Err(e),
            };
            *uw += du_c;
            for (ci, &dof) in self.free.iter().enumerate() {
                uw[dof] += du[ci];
            }
            if self.config.strategy == Strategy::Secant {
                factor = f;
            }
        }

        for iteration in 0..=self.config.max_iterations {
            let assembled = match self.assemble(uw, f_ext, hooks) {
                Ok(a) => a,
                Err(FemError::Hook(e)) if Self::cancels_step(&e) => return Ok(Search::Cancelled),
                Err(e) => return Err(e),
            };
            *iterations += 1;
            let norm = self.free_norm(&assembled.residual);
            if !norm.is_finite() {
                return Ok(Search::Cancelled);
            }
            let reference = *ref_norm.get_or_insert(norm);
            if norm <= (self.config.rel_tol * reference).max(self.config.abs_tol) {
                return Ok(Search::Converged {
                    f_int: assembled.f_int,
                    strains: assembled.strains,
                });
            }
            if iteration == self.config.max_iterations {
                break;
            }
            if factor.is_none() || self.config.strategy == Strategy::FullNewton {
                factor = match assembled.stiffness.factorize() {
                    Ok(f) => Some(f),
                    // A singular tangent mid-step is a constitutive
                    // pathology; roll back and re-attempt.
                    Err(FemError::LinearSolve(_)) => return Ok(Search::Cancelled),
                    Err(e) => return Err(e),
                };
            }
            let rhs = DVector::from_fn(self.free.len(), |i, _| -assembled.residual[self.free[i]]);
            let du = match factor.as_ref().expect("factor just ensured").solve(&rhs) {
                Ok(du) => du,
                Err(FemError::LinearSolve(_)) => return Ok(Search::Cancelled),
                Err(e) => return Err(e),
            };
            for (ci, &dof) in self.free.iter().enumerate() {
                uw[dof] += du[ci];
            }
        }
        Ok(Search::Cancelled)
    }

    /// Solves the next load step.
    ///
    /// On success the committed state (displacements, strains, hook
    /// history) has advanced by one step and the returned outcome records
    /// iteration counts, verdicts and reactions.  Exceeding the configured
    /// number of consecutive cancelled attempts yields
    /// [`FemError::StepFailed`] and leaves the committed state untouched.
    pub fn solve_step(
        &mut self,
        hooks: &mut dyn ConstitutiveHooks,
    ) -> Result<&StepOutcome, FemError> {
        let step = self.step;
        if step >= self.config.steps {
            return Err(FemError::Config(format!(
                "all {} configured steps already solved",
                self.config.steps
            )));
        }
        let ramp = (step + 1) as f64 / self.config.steps as f64;
        let f_ext = &self.unit_f_ext * ramp;
        let targets: Vec<(usize, f64)> =
            self.constraints.iter().map(|&(dof, total)| (dof, total * ramp)).collect();

        let mut outcome = StepOutcome {
            step,
            converged: false,
            iterations: 0,
            verdicts: Vec::new(),
            cancels: 0,
            rejections: 0,
            reactions: BTreeMap::new(),
        };

        'attempts: while outcome.cancels < self.config.max_cancels {
            let mut uw = self.u.clone();
            let mut predictor = Some(self.prescribed_increment(&targets, &uw));
            let mut ref_norm: Option<f64> = None;

            loop {
                let search = self.equilibrium_search(
                    &mut uw,
                    &f_ext,
                    hooks,
                    &mut ref_norm,
                    &mut outcome.iterations,
                    predictor.take().as_ref(),
                )?;
                let (f_int, strains) = match search {
                    Search::Converged { f_int, strains } => (f_int, strains),
                    Search::Cancelled => {
                        outcome.verdicts.push(Verdict::Cancel);
                        outcome.cancels += 1;
                        hooks.cancel(&self.committed_strains)?;
                        continue 'attempts;
                    }
                };
                let verdict = match hooks.check_solution(step, &strains) {
                    Ok(v) => v,
                    Err(e) if Self::cancels_step(&e) => Verdict::Cancel,
                    Err(e) => return Err(e.into()),
                };
                outcome.verdicts.push(verdict);
                match verdict {
                    Verdict::Accept => {
                        hooks.commit(step, &strains)?;
                        self.u = uw;
                        self.committed_strains = strains;
                        outcome.converged = true;
                        outcome.reactions = self.reactions(&f_int, &f_ext);
                        self.step += 1;
                        self.outcomes.push(outcome);
                        return Ok(self.outcomes.last().expect("outcome just pushed"));
                    }
                    Verdict::RejectContinue => {
                        outcome.rejections += 1;
                        // Keep the current displacements; the constitutive
                        // state has changed, so re-search equilibrium.
                    }
                    Verdict::RejectRestartFirstStep => {
                        outcome.rejections += 1;
                        uw = self.u.clone();
                        predictor = Some(self.prescribed_increment(&targets, &uw));
                        ref_norm = None;
                    }
                    Verdict::Cancel => {
                        outcome.cancels += 1;
                        hooks.cancel(&self.committed_strains)?;
                        continue 'attempts;
                    }
                }
            }
        }
        Err(FemError::StepFailed { step, cancels: outcome.cancels })
    }
}
