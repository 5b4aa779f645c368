//! Online-trained constitutive surrogate with active anchor sampling.
//!
//! The surrogate wraps an arbitrary full-order material (a closed-form
//! plasticity law, or an entire homogenized micro problem) and replaces
//! its evaluation at every integration point with
//!
//! ```text
//! sigma(eps) = D_e eps + E[sigma_hat(eps)],    D(eps) = D_e + E[D_hat(eps)]
//! ```
//!
//! where `D_e` is the initial elastic stiffness captured from the very
//! first full-order solve and `sigma_hat` is a per-stress-component
//! Gaussian-process correction trained *during* the analysis.  Far from
//! data the GP mean reverts to zero, so the surrogate degrades gracefully
//! to linear elasticity instead of extrapolating wildly (Rasmussen &
//! Williams, Gaussian Processes for Machine Learning, ch. 2).
//!
//! Training data comes from a small set of *anchor* models: full-order
//! material clones owned by the surrogate, each pinned to one integration
//! point and solved only when the predictive uncertainty
//!
//! ```text
//! gamma = max_i sqrt(V[sigma_hat_i])
//! ```
//!
//! at its point exceeds a tolerance.  Selection is greedy — one new
//! observation per equilibrium pass, anchors preferred over new points —
//! so the dataset stays small and the global Newton solver is never
//! perturbed by more than one constitutive change at a time.  The five
//! solver hooks (update, check, data selection, commit, cancel) follow
//! the adaptive scheme in the module-level lifecycle of [`crate::fem`]:
//! a converged solution may be accepted, re-searched with refreshed GP
//! models, or cancelled outright when uncertainty explodes, in which case
//! the step restarts with extra data and a secant (elastic) stiffness.
//!
//! The payoff is measured by the reduction ratio `R = n_ref_f / n_gp_f`:
//! full-order evaluations a conventional run would have performed versus
//! the ones the surrogate actually performed (anchor solves, history
//! replays, and initialization ramps included).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::fem::{ConstitutiveHooks, FemError, HookError, Verdict};
use crate::gp::{
    optimize_hyperparams, GpError, GpModel, GpObservation, HyperBounds, Hyperparams,
    OptimizeSettings,
};
use crate::materials::Material;
use crate::numerics::kmeans;

/// Tuning parameters of the active-learning surrogate.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    /// Number of k-means clusters (and therefore initial anchors).
    pub k: usize,
    /// Uncertainty tolerance driving data selection, in stress units.
    pub gamma_tol: f64,
    /// Uncertainty level at which the running step is cancelled.
    pub gamma_cancel: f64,
    /// Retrain hyperparameters when the log marginal likelihood drifts from
    /// its value at the last fit by more than this factor.
    pub l_retrain: f64,
    /// Seed for clustering, restarts and hyperparameter optimization.
    pub seed: u64,
    /// Lower bounds for the hyperparameter search.
    pub bounds: HyperBounds,
    /// BFGS restart/tolerance settings for (re)training.
    pub opt: OptimizeSettings,
    /// Substeps of each fictitious initialization ramp.
    pub fict_substeps: usize,
    /// Ramp extent as a multiple of the cluster-representative strain.
    pub fict_scale: f64,
    /// Predictive-std threshold for dosing fictitious data
    /// (`None` = use `gamma_tol`).
    pub dose_threshold: Option<f64>,
    /// Hyperparameters to hold fixed for the whole run, e.g. values carried
    /// over from a previous analysis of the same structure.  Skips the
    /// fictitious initialization ramps and disables retraining, so runs
    /// across a mesh family share one surrogate configuration.
    pub fixed_hypers: Option<Hyperparams>,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            k: 1,
            gamma_tol: 0.4,
            gamma_cancel: 20.0,
            l_retrain: 10.0,
            seed: 0,
            bounds: HyperBounds::default(),
            opt: OptimizeSettings::default(),
            fict_substeps: 20,
            fict_scale: 1.5,
            dose_threshold: None,
            fixed_hypers: None,
        }
    }
}

impl SurrogateParams {
    /// Checks parameter invariants.
    pub fn validate(&self) -> Result<(), FemError> {
        if self.k == 0 {
            return Err(FemError::Config("cluster count k must be at least 1".into()));
        }
        if !(self.gamma_tol > 0.0 && self.gamma_cancel > self.gamma_tol) {
            return Err(FemError::Config(format!(
                "uncertainty thresholds must satisfy 0 < gamma_tol < gamma_cancel, got {} and {}",
                self.gamma_tol, self.gamma_cancel
            )));
        }
        if !(self.l_retrain > 1.0) {
            return Err(FemError::Config(format!(
                "retrain ratio must exceed 1, got {}",
                self.l_retrain
            )));
        }
        if self.fict_substeps == 0 || !(self.fict_scale > 0.0) {
            return Err(FemError::Config(
                "fictitious ramp needs at least one substep and a positive scale".into(),
            ));
        }
        if let Some(h) = &self.fixed_hypers {
            let ok = h.sigma_f2 > 0.0
                && h.ell > 0.0
                && h.sigma_n2 >= 0.0
                && h.sigma_f2.is_finite()
                && h.ell.is_finite()
                && h.sigma_n2.is_finite();
            if !ok {
                return Err(FemError::Config(format!(
                    "fixed hyperparameters need positive finite variance and length scale \
                     and non-negative finite noise, got sigma_f2={}, ell={}, sigma_n2={}",
                    h.sigma_f2, h.ell, h.sigma_n2
                )));
            }
        }
        Ok(())
    }

    fn dose(&self) -> f64 {
        self.dose_threshold.unwrap_or(self.gamma_tol)
    }
}

/// Sentinel row index marking a point excluded from data selection for
/// the remainder of the running step (its contribution already exists in
/// the dataset).
const NO_ROW: usize = usize::MAX;

/// One anchored full-order model and its sampling bookkeeping.
struct Anchor {
    material: Box<dyn Material>,
    /// Observation captured at the anchor's most recent loading state,
    /// returned in place of fresh data while the anchor unloads.
    latest_loading: Option<LoadingRow>,
    /// How many observations this anchor has contributed.
    samples: u64,
    committed_eps_norm: f64,
    trial_eps_norm: f64,
}

#[derive(Clone)]
struct LoadingRow {
    eps: DVector<f64>,
    sig_hat: DVector<f64>,
    d_hat: DMatrix<f64>,
}

/// Per-step metrics snapshot emitted for run artifacts.
#[derive(Debug, Clone)]
pub struct SurrogateMetrics {
    /// Committed step count at snapshot time.
    pub steps_committed: usize,
    /// Anchor-set cardinality `|A|`.
    pub n_anchors: usize,
    /// Dataset cardinality `|D|` (observations per component GP).
    pub n_data: usize,
    /// Full-order evaluations performed by the surrogate.
    pub n_gp_f: u64,
    /// Full-order evaluations a conventional run would have performed.
    pub n_ref_f: u64,
    /// Reduction ratio `n_ref_f / n_gp_f` (infinite before any solve).
    pub reduction_ratio: f64,
    /// Cancelled step attempts so far.
    pub n_cancels: u64,
    /// Hyperparameter retraining events so far (excluding initialization).
    pub n_retrains: u64,
    /// `(point id, samples contributed)` per anchor, ascending by point.
    pub anchor_samples: Vec<(usize, u64)>,
}

/// Active-learning surrogate implementing the solver hook lifecycle.
pub struct SurrogateHooks {
    params: SurrogateParams,
    template: Box<dyn Material>,
    n_points: usize,
    n_comp: usize,
    d_e: Option<DMatrix<f64>>,
    initialized: bool,
    gps: Vec<GpModel>,
    anchors: BTreeMap<usize, Anchor>,
    /// Tracked set: point id -> observation row contributed this step.
    tracked: BTreeMap<usize, usize>,
    eps_n: Vec<DVector<f64>>,
    gamma_new: Vec<f64>,
    gamma_old: Vec<f64>,
    eps_h: Vec<Vec<DVector<f64>>>,
    n_gp_f: u64,
    n_ref_f: u64,
    l_stored: f64,
    secant: bool,
    n_cancels: u64,
    n_retrains: u64,
    steps_committed: usize,
    warnings: Vec<String>,
}

impl SurrogateHooks {
    /// Wraps `template` (cloned per anchor) for a model with `n_points`
    /// integration points.
    pub fn new(
        template: &dyn Material,
        n_points: usize,
        params: SurrogateParams,
    ) -> Result<Self, FemError> {
        params.validate()?;
        if n_points == 0 {
            return Err(FemError::Config("surrogate needs at least one integration point".into()));
        }
        let n_comp = template.n_strain();
        Ok(Self {
            params,
            template: template.clone_pristine(),
            n_points,
            n_comp,
            d_e: None,
            initialized: false,
            gps: Vec::new(),
            anchors: BTreeMap::new(),
            tracked: BTreeMap::new(),
            eps_n: vec![DVector::zeros(n_comp); n_points],
            gamma_new: vec![0.0; n_points],
            gamma_old: vec![0.0; n_points],
            eps_h: vec![Vec::new(); n_points],
            n_gp_f: 0,
            n_ref_f: 0,
            l_stored: 0.0,
            secant: false,
            n_cancels: 0,
            n_retrains: 0,
            steps_committed: 0,
            warnings: Vec::new(),
        })
    }

    /// The captured initial elastic stiffness, once bootstrapped.
    pub fn elastic_stiffness(&self) -> Option<&DMatrix<f64>> {
        self.d_e.as_ref()
    }

    /// Per-component correction GP models.
    pub fn gps(&self) -> &[GpModel] {
        &self.gps
    }

    /// Anchored point ids, ascending.
    pub fn anchor_points(&self) -> Vec<usize> {
        self.anchors.keys().copied().collect()
    }

    /// Number of observation rows in the shared dataset.
    pub fn n_data(&self) -> usize {
        self.gps.first().map_or(0, GpModel::n_obs)
    }

    /// Full-order evaluations performed so far.
    pub fn n_gp_f(&self) -> u64 {
        self.n_gp_f
    }

    /// Full-order evaluations a conventional run would have performed.
    pub fn n_ref_f(&self) -> u64 {
        self.n_ref_f
    }

    /// `n_ref_f / n_gp_f`; infinite while no full-order solve has run.
    pub fn reduction_ratio(&self) -> f64 {
        if self.n_gp_f == 0 {
            f64::INFINITY
        } else {
            self.n_ref_f as f64 / self.n_gp_f as f64
        }
    }

    /// Latest uncertainty indicator per integration point.
    pub fn gammas(&self) -> &[f64] {
        &self.gamma_new
    }

    /// Points excluded from further data selection while the step
    /// iterates — their rows follow the iterate in place — ascending;
    /// cleared on commit.
    pub fn tracked_points(&self) -> Vec<usize> {
        self.tracked.keys().copied().collect()
    }

    /// Warnings accumulated during training (e.g. optimizer fallbacks).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Metrics snapshot for run artifacts.
    pub fn metrics(&self) -> SurrogateMetrics {
        SurrogateMetrics {
            steps_committed: self.steps_committed,
            n_anchors: self.anchors.len(),
            n_data: self.n_data(),
            n_gp_f: self.n_gp_f,
            n_ref_f: self.n_ref_f,
            reduction_ratio: self.reduction_ratio(),
            n_cancels: self.n_cancels,
            n_retrains: self.n_retrains,
            anchor_samples: self.anchors.iter().map(|(&p, a)| (p, a.samples)).collect(),
        }
    }

    fn gp_failed(context: &str, e: GpError) -> HookError {
        HookError::Failed(format!("{context}: {e}"))
    }

    /// Whether `eps` effectively coincides with an existing observation
    /// input (other than `skip_idx`).  With noiseless value-plus-gradient
    /// data, inputs much closer than the kernel length scale are linearly
    /// dependent rows of the covariance: they carry no new information but
    /// destroy its conditioning, so they must never enter the dataset.
    /// Such inputs arise legitimately from symmetric twin points and from
    /// unloading anchors whose latest loading row was already recorded.
    fn row_duplicates_dataset(&self, eps: &DVector<f64>, skip_idx: Option<usize>) -> bool {
        let ell_min = self.gps.iter().map(|g| g.hyper().ell).fold(f64::INFINITY, f64::min);
        let tol = (0.01 * ell_min).max(1e-7 * (1.0 + eps.norm()));
        self.gps[0]
            .observations()
            .iter()
            .enumerate()
            .any(|(i, o)| Some(i) != skip_idx && (&o.x - eps).norm() <= tol)
    }

    /// Solves `anchor`'s full model at `eps`, returning the correction
    /// observation to record — the current state while the anchor is
    /// loading, or its latest loading-state row while it unloads (data
    /// from non-monotonic paths would read as noise to the GP).
    fn solve_anchor_inner(
        anchor: &mut Anchor,
        d_e: &DMatrix<f64>,
        point: usize,
        eps: &DVector<f64>,
    ) -> Result<LoadingRow, HookError> {
        let st = anchor
            .material
            .update(eps)
            .map_err(|source| HookError::Material { point, source })?;
        anchor.trial_eps_norm = eps.norm();

        let plastic_advance = anchor.material.trial_eps_p_eq() > anchor.material.eps_p_eq();
        let elastic_advance = anchor.material.trial_eps_p_eq() == 0.0
            && anchor.material.eps_p_eq() == 0.0
            && anchor.trial_eps_norm > anchor.committed_eps_norm;
        let loading = plastic_advance || elastic_advance;

        let row = LoadingRow {
            eps: eps.clone(),
            sig_hat: &st.stress - d_e * eps,
            d_hat: &st.tangent - d_e,
        };
        if loading {
            anchor.latest_loading = Some(row.clone());
            Ok(row)
        } else {
            Ok(anchor.latest_loading.clone().unwrap_or(row))
        }
    }

    /// [`Self::solve_anchor_inner`] against the anchored point's model,
    /// with evaluation counting.
    fn solve_anchor(&mut self, point: usize, eps: &DVector<f64>) -> Result<LoadingRow, HookError> {
        let d_e = self.d_e.clone().expect("anchors exist only after the stiffness bootstrap");
        let anchor = self.anchors.get_mut(&point).expect("candidate was anchored before solving");
        let row = Self::solve_anchor_inner(anchor, &d_e, point, eps)?;
        self.n_gp_f += 1;
        Ok(row)
    }

    /// Appends `row` as one observation per component GP; all models share
    /// the same input list, so the returned row index is common.
    fn append_row(&mut self, row: &LoadingRow) -> Result<usize, HookError> {
        let mut idx = None;
        for c in 0..self.n_comp {
            let o = GpObservation::new(
                row.eps.clone(),
                row.sig_hat[c],
                row.d_hat.row(c).transpose(),
            )
            .map_err(|e| Self::gp_failed("recording observation", e))?;
            let i = self.gps[c]
                .add_observation(o)
                .map_err(|e| Self::gp_failed("recording observation", e))?;
            let prev = *idx.get_or_insert(i);
            assert_eq!(prev, i, "component models must share one input list");
        }
        Ok(idx.expect("at least one stress component"))
    }

    fn replace_row(&mut self, idx: usize, row: &LoadingRow) -> Result<(), HookError> {
        for c in 0..self.n_comp {
            let o = GpObservation::new(
                row.eps.clone(),
                row.sig_hat[c],
                row.d_hat.row(c).transpose(),
            )
            .map_err(|e| Self::gp_failed("replacing observation", e))?;
            self.gps[c]
                .replace_observation(idx, o)
                .map_err(|e| Self::gp_failed("replacing observation", e))?;
        }
        Ok(())
    }

    fn refresh_gps(&mut self) -> Result<(), HookError> {
        for gp in &mut self.gps {
            gp.refresh().map_err(|e| Self::gp_failed("refreshing GP factorization", e))?;
        }
        Ok(())
    }

    fn total_log_ml(&self) -> Result<f64, HookError> {
        let mut sum = 0.0;
        for gp in &self.gps {
            sum += gp.log_ml().map_err(|e| Self::gp_failed("evaluating log marginal", e))?;
        }
        Ok(sum)
    }

    /// Recomputes the uncertainty indicator at every point's stored strain
    /// against the current (fresh) GP models, softening penalty included.
    fn recompute_gammas(&mut self) -> Result<(), HookError> {
        let d_e = self.d_e.as_ref().expect("initialized");
        for p in 0..self.n_points {
            let mut gamma = 0.0f64;
            let mut penalty = 0.0;
            for (c, gp) in self.gps.iter().enumerate() {
                let pred = gp
                    .predict(&self.eps_n[p])
                    .map_err(|e| Self::gp_failed("recomputing uncertainty", e))?;
                gamma = gamma.max(pred.variance.max(0.0).sqrt());
                let d_ii = d_e[(c, c)] + pred.mean_grad[c];
                if d_ii < 0.0 {
                    penalty -= d_ii;
                }
            }
            self.gamma_new[p] = gamma + penalty;
        }
        Ok(())
    }

    /// Retrains hyperparameters when the marginal likelihood has drifted
    /// from its value at the last fit by more than the configured factor —
    /// growing data make the magnitude of the log marginal likelihood creep
    /// upward, and a fit that has become inadequate makes it explode, so the
    /// drift ratio doubles as a staleness and a misfit detector.
    fn maybe_retrain(&mut self) -> Result<(), HookError> {
        if self.params.fixed_hypers.is_some() {
            return Ok(());
        }
        let current = self.total_log_ml()?;
        let ratio =
            if self.l_stored == 0.0 { f64::INFINITY } else { (current / self.l_stored).abs() };
        if ratio <= self.params.l_retrain {
            return Ok(());
        }
        let salt = 2000 + 1000 * self.n_retrains;
        for c in 0..self.n_comp {
            let x0 = *self.gps[c].hyper();
            let seed = self.params.seed.wrapping_add(salt + c as u64);
            match optimize_hyperparams(&self.gps[c], &x0, &self.params.bounds, seed, &self.params.opt)
            {
                Ok(h) => {
                    self.gps[c].set_hyper(h);
                    self.gps[c]
                        .refresh()
                        .map_err(|e| Self::gp_failed("refreshing after retraining", e))?;
                }
                Err(e) => {
                    self.warnings.push(format!(
                        "retraining component {c} failed ({e}); keeping previous hyperparameters"
                    ));
                    self.gps[c]
                        .refresh()
                        .map_err(|e| Self::gp_failed("refreshing after retraining", e))?;
                }
            }
        }
        self.n_retrains += 1;
        self.l_stored = self.total_log_ml()?;
        Ok(())
    }

    /// Greedy data selection: refreshes tracked rows at the new
    /// equilibrium strains, then samples the most uncertain untracked
    /// anchor above `threshold` — or, failing that, anchors the most
    /// uncertain untracked point (replaying its strain history first).
    ///
    /// Returns `true` when the tracked set changed (one row appended).
    fn add_data(&mut self, threshold: f64) -> Result<bool, HookError> {
        // (1) Re-solve tracked anchors at their points' new equilibrium
        // strains and update their rows in place.
        let tracked: Vec<(usize, usize)> = self.tracked.iter().map(|(&p, &i)| (p, i)).collect();
        for (point, idx) in &tracked {
            if *idx == NO_ROW {
                continue;
            }
            let eps = self.eps_n[*point].clone();
            let row = self.solve_anchor(*point, &eps)?;
            if self.row_duplicates_dataset(&row.eps, Some(*idx)) {
                // Converging onto a twin row: keep the old observation.
                continue;
            }
            self.replace_row(*idx, &row)?;
        }
        self.refresh_gps()?;

        // (2) Refresh uncertainty indicators against the updated models.
        self.recompute_gammas()?;

        loop {
            // (3) Candidate selection: untracked anchors first, then
            // untracked points (lowest point id wins ties for determinism).
            let better = |best: Option<(usize, f64)>, p: usize, g: f64| match best {
                Some((_, gb)) if gb >= g => best,
                _ => Some((p, g)),
            };
            let mut candidate: Option<(usize, f64)> = None;
            for (&p, _) in self.anchors.iter() {
                if !self.tracked.contains_key(&p) && self.gamma_new[p] > threshold {
                    candidate = better(candidate, p, self.gamma_new[p]);
                }
            }
            let mut is_new_anchor = false;
            if candidate.is_none() {
                for p in 0..self.n_points {
                    if !self.anchors.contains_key(&p)
                        && !self.tracked.contains_key(&p)
                        && self.gamma_new[p] > threshold
                    {
                        candidate = better(candidate, p, self.gamma_new[p]);
                    }
                }
                is_new_anchor = candidate.is_some();
            }
            let Some((point, _)) = candidate else {
                return Ok(false);
            };

            // (4) A new anchor first replays its point's committed strain
            // history so its internal state matches the current step; the
            // latest loading row is captured along the way.
            if is_new_anchor {
                let d_e = self.d_e.clone().expect("initialized");
                let mut anchor = Anchor {
                    material: self.template.clone_pristine(),
                    latest_loading: None,
                    samples: 0,
                    committed_eps_norm: 0.0,
                    trial_eps_norm: 0.0,
                };
                for eps in self.eps_h[point].clone() {
                    Self::solve_anchor_inner(&mut anchor, &d_e, point, &eps)?;
                    self.n_gp_f += 1;
                    anchor.material.commit();
                    anchor.committed_eps_norm = anchor.trial_eps_norm;
                }
                self.anchors.insert(point, anchor);
            }

            // (5) Solve at the current strain and record one observation.
            // A solve can still deliver an input already in the dataset (a
            // symmetric twin's strain, or an unloading anchor whose latest
            // loading row was recorded earlier): such a point is excluded
            // from re-selection until the step resolves and the next
            // candidate is considered instead.
            let eps = self.eps_n[point].clone();
            let row = self.solve_anchor(point, &eps)?;
            if self.row_duplicates_dataset(&row.eps, None) {
                self.tracked.insert(point, NO_ROW);
                continue;
            }
            let idx = self.append_row(&row)?;
            self.refresh_gps()?;
            self.tracked.insert(point, idx);
            self.anchors.get_mut(&point).expect("anchored above").samples += 1;
            return Ok(true);
        }
    }

    /// First-step initialization: cluster the elastic strain field, anchor
    /// one representative per cluster, estimate hyperparameters from
    /// fictitious ramps, and seed the dataset.
    fn initialize(&mut self, strains: &[DVector<f64>]) -> Result<(), HookError> {
        let clusters = kmeans(strains, self.params.k.min(self.n_points), self.params.seed, 100)
            .map_err(|e| HookError::Failed(format!("k-means initialization: {e}")))?;

        // Hyperparameters from fictitious anchors loaded along each
        // representative's strain direction, dosed by predictive std.
        let hypers = self.init_hyperparams(strains, &clusters.representatives)?;
        self.gps = hypers.into_iter().map(|h| GpModel::new(self.n_comp, h)).collect();

        // Anchor and sample each cluster representative; seed the tracked
        // set so the restarted first step updates these rows in place
        // instead of duplicating them.
        for &p in &clusters.representatives {
            self.anchors.insert(
                p,
                Anchor {
                    material: self.template.clone_pristine(),
                    latest_loading: None,
                    samples: 0,
                    committed_eps_norm: 0.0,
                    trial_eps_norm: 0.0,
                },
            );
            let eps = strains[p].clone();
            let row = self.solve_anchor(p, &eps)?;
            if self.row_duplicates_dataset(&row.eps, None) {
                // Representatives of coinciding strains seed one shared row.
                self.tracked.insert(p, NO_ROW);
                continue;
            }
            let idx = self.append_row(&row)?;
            self.tracked.insert(p, idx);
            self.anchors.get_mut(&p).expect("just inserted").samples += 1;
        }
        self.refresh_gps()?;
        self.l_stored = self.total_log_ml()?;
        self.initialized = true;
        Ok(())
    }

    /// Estimates per-component hyperparameters from fictitious full-order
    /// models ramped monotonically along each cluster representative's
    /// strain direction.  Data is dosed by a predictive-std threshold to
    /// stay uniformly spaced, used for one BFGS fit, then discarded.
    fn init_hyperparams(
        &mut self,
        strains: &[DVector<f64>],
        representatives: &[usize],
    ) -> Result<Vec<Hyperparams>, HookError> {
        if let Some(h) = self.params.fixed_hypers {
            // Pinned hyperparameters: no ramp data is needed, so the
            // fictitious solves (and their full-order cost) are skipped.
            return Ok(vec![h; self.n_comp]);
        }
        let provisional = Hyperparams::new(1.0, 1.0e-2, 0.0);
        let d_e = self.d_e.clone().expect("bootstrap precedes initialization");
        let dose = self.params.dose();
        let mut fict: Vec<GpModel> =
            (0..self.n_comp).map(|_| GpModel::new(self.n_comp, provisional)).collect();

        for &rep in representatives {
            let direction = &strains[rep];
            if direction.norm() == 0.0 {
                continue;
            }
            let mut model = self.template.clone_pristine();
            for j in 1..=self.params.fict_substeps {
                let eps =
                    direction * (self.params.fict_scale * j as f64 / self.params.fict_substeps as f64);
                let st = model
                    .update(&eps)
                    .map_err(|source| HookError::Material { point: rep, source })?;
                model.commit();
                self.n_gp_f += 1;

                // Dose: add only where the provisional model is uncertain.
                let mut std = f64::INFINITY;
                if fict[0].n_obs() > 0 {
                    std = 0.0;
                    for gp in &fict {
                        let v = gp
                            .predict_variance(&eps)
                            .map_err(|e| Self::gp_failed("dosing fictitious data", e))?;
                        std = f64::max(std, v.max(0.0).sqrt());
                    }
                }
                if std > dose {
                    let sig_hat = &st.stress - &d_e * &eps;
                    let d_hat = &st.tangent - &d_e;
                    for (c, gp) in fict.iter_mut().enumerate() {
                        let o = GpObservation::new(
                            eps.clone(),
                            sig_hat[c],
                            d_hat.row(c).transpose(),
                        )
                        .map_err(|e| Self::gp_failed("recording fictitious data", e))?;
                        gp.add_observation(o)
                            .map_err(|e| Self::gp_failed("recording fictitious data", e))?;
                    }
                    for gp in fict.iter_mut() {
                        gp.refresh()
                            .map_err(|e| Self::gp_failed("refreshing fictitious model", e))?;
                    }
                }
            }
        }

        let mut hypers = Vec::with_capacity(self.n_comp);
        let d_e_scale = d_e.amax();
        for (c, gp) in fict.iter().enumerate() {
            if gp.n_obs() == 0 {
                self.warnings.push(format!(
                    "initialization produced no fictitious data for component {c}; \
                     keeping provisional hyperparameters"
                ));
                hypers.push(provisional);
                continue;
            }
            // A ramp that never leaves the elastic regime yields corrections
            // at round-off level; maximizing the likelihood of such data
            // collapses the signal variance to its lower bound and the
            // uncertainty indicator goes permanently blind. Keep the
            // provisional prior instead: unexplored regions then stay
            // uncertain until real corrections arrive and the retraining
            // trigger takes over.
            let x_max =
                gp.observations().iter().map(|o| o.x.norm()).fold(0.0f64, f64::max).max(1e-12);
            let signal = gp
                .observations()
                .iter()
                .map(|o| o.t.abs().max(o.t_grad.amax()))
                .fold(0.0f64, f64::max);
            if signal <= 1e-7 * d_e_scale * x_max {
                self.warnings.push(format!(
                    "initialization ramp stayed elastic for component {c}; \
                     keeping provisional hyperparameters"
                ));
                hypers.push(provisional);
                continue;
            }
            let seed = self.params.seed.wrapping_add(1000 + c as u64);
            match optimize_hyperparams(gp, &provisional, &self.params.bounds, seed, &self.params.opt)
            {
                Ok(h) => hypers.push(h),
                Err(e) => {
                    self.warnings.push(format!(
                        "initial hyperparameter fit failed for component {c} ({e}); \
                         falling back to provisional values"
                    ));
                    hypers.push(provisional);
                }
            }
        }
        Ok(hypers)
    }
}

impl ConstitutiveHooks for SurrogateHooks {
    fn material_update(
        &mut self,
        point: usize,
        eps: &DVector<f64>,
    ) -> Result<crate::materials::StressTangent, HookError> {
        self.n_ref_f += 1;
        if !self.initialized {
            // Initialization sweep: one pristine solve at zero strain
            // bootstraps the elastic stiffness (any other state would
            // capture an inelastic tangent); every point then responds
            // elastically until the surrogate is trained.
            if self.d_e.is_none() {
                let mut boot = self.template.clone_pristine();
                let zero = DVector::zeros(self.n_comp);
                let st = boot
                    .update(&zero)
                    .map_err(|source| HookError::Material { point, source })?;
                self.n_gp_f += 1;
                self.d_e = Some(st.tangent);
            }
            let d_e = self.d_e.as_ref().expect("just bootstrapped");
            return Ok(crate::materials::StressTangent {
                stress: d_e * eps,
                tangent: d_e.clone(),
            });
        }

        let d_e = self.d_e.as_ref().expect("initialized implies bootstrapped");
        let mut stress = d_e * eps;
        let mut tangent = d_e.clone();
        let mut gamma = 0.0f64;
        let mut penalty = 0.0;
        for (c, gp) in self.gps.iter().enumerate() {
            let pred =
                gp.predict(eps).map_err(|e| Self::gp_failed("surrogate prediction", e))?;
            stress[c] += pred.mean;
            for j in 0..self.n_comp {
                tangent[(c, j)] += pred.mean_grad[j];
            }
            gamma = gamma.max(pred.variance.max(0.0).sqrt());
        }
        if gamma > self.params.gamma_cancel {
            return Err(HookError::CancelRequested { point, gamma });
        }
        for c in 0..self.n_comp {
            let d_ii = tangent[(c, c)];
            if d_ii < 0.0 {
                penalty -= d_ii;
            }
        }
        gamma += penalty;
        if self.secant {
            tangent = d_e.clone();
        }
        self.eps_n[point] = eps.clone();
        self.gamma_new[point] = gamma;
        Ok(crate::materials::StressTangent { stress, tangent })
    }

    fn check_solution(
        &mut self,
        _step: usize,
        strains: &[DVector<f64>],
    ) -> Result<Verdict, HookError> {
        assert_eq!(strains.len(), self.n_points, "one strain record per integration point");
        for (p, eps) in strains.iter().enumerate() {
            self.eps_n[p] = eps.clone();
        }
        if !self.initialized {
            self.initialize(strains)?;
            return Ok(Verdict::RejectRestartFirstStep);
        }
        if !self.add_data(self.params.gamma_tol)? {
            return Ok(Verdict::Accept);
        }
        self.maybe_retrain()?;
        Ok(Verdict::RejectContinue)
    }

    fn commit(&mut self, _step: usize, strains: &[DVector<f64>]) -> Result<(), HookError> {
        self.tracked.clear();
        self.gamma_old.copy_from_slice(&self.gamma_new);
        for (p, eps) in strains.iter().enumerate() {
            self.eps_h[p].push(eps.clone());
        }
        for anchor in self.anchors.values_mut() {
            anchor.material.commit();
            anchor.committed_eps_norm = anchor.trial_eps_norm;
        }
        self.secant = false;
        self.steps_committed += 1;
        Ok(())
    }

    fn cancel(&mut self, committed_strains: &[DVector<f64>]) -> Result<(), HookError> {
        self.n_cancels += 1;
        for anchor in self.anchors.values_mut() {
            anchor.material.cancel();
            anchor.trial_eps_norm = anchor.committed_eps_norm;
        }
        // Recover converged values: uncertainty and query strains roll
        // back to the last committed state before extra data is drawn.
        self.gamma_new.copy_from_slice(&self.gamma_old);
        for (p, eps) in committed_strains.iter().enumerate() {
            self.eps_n[p] = eps.clone();
        }
        if self.initialized {
            self.add_data(0.0)?;
            self.maybe_retrain()?;
        }
        self.secant = true;
        Ok(())
    }
}
