//! Gradient-enhanced Gaussian-process regression.
//!
//! Each model is a zero-mean GP over a `dim`-dimensional input space with the
//! squared-exponential kernel
//!
//! ```text
//! k(x_p, x_q) = σ_f² exp(−‖x_p − x_q‖² / (2ℓ²))
//! ```
//!
//! conditioned jointly on function values *and* their gradients. Because
//! differentiation is linear, derivative observations are handled by extending
//! the covariance with the kernel's first and second derivatives (Rasmussen &
//! Williams, §9.4): for `N` observations in `D` dimensions the joint system
//! has `M = N(D+1)` rows,
//!
//! ```text
//!        ⎡ K_oo + σ_n² I   K_od ⎤         ⎡ t_1 … t_N ⎤
//! K̄  =  ⎢                      ⎥ ,  t̄ = ⎢           ⎥
//!        ⎣ K_odᵀ  K_dd + σ_d² I ⎦         ⎣ ∇t_1 … ∇t_N ⎦
//! ```
//!
//! where `K_oo` holds plain kernel values, `K_od` kernel/gradient
//! cross-covariances and `K_dd` gradient/gradient covariances. Training
//! solves `K̄ α = t̄` through a jittered Cholesky factorization; prediction
//! and the marginal likelihood reuse the stored factor.
//!
//! Hyperparameters `(σ_f², ℓ, σ_n²)` are fit by maximizing the log marginal
//! likelihood with BFGS in log-space (which enforces the lower bounds), with
//! a configurable number of randomized restarts. The derivative noise `σ_d²`
//! is kept fixed; it exists so that ill-conditioned gradient blocks can be
//! regularized explicitly when needed.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{self, CholFactor, NumericsError, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Errors produced by model assembly, training, and prediction.
#[derive(Debug, Error)]
pub enum GpError {
    /// A linear-algebra failure (non-PD covariance, dimension mismatch, ...).
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    /// The model holds no observations, so there is nothing to condition on.
    #[error("model has no observations")]
    EmptyModel,
    /// The observation set changed after the last `refresh()`.
    #[error("factorization is stale: observations or hyperparameters changed since the last refresh")]
    StaleFactorization,
    /// `refresh()` has never been called.
    #[error("model has never been refreshed")]
    NeverRefreshed,
    /// An input or observation has the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// An observation or query contains NaN or infinity.
    #[error("non-finite value in observation or query")]
    NonFinite,
    /// Every optimizer start failed (e.g. all trial covariances were singular).
    #[error("hyperparameter optimization failed from every start")]
    OptimizationFailed,
}

/// Kernel and noise parameters of a gradient-enhanced GP.
///
/// Invariants: `sigma_f2 > 0`, `ell > 0`, `sigma_n2 >= 0`, `sigma_d2 >= 0`.
/// They are checked when the model is (re)factorized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Signal variance σ_f² (prior variance far from all data).
    pub sigma_f2: f64,
    /// Length scale ℓ of the squared-exponential kernel.
    pub ell: f64,
    /// Observation noise variance σ_n² on function values.
    pub sigma_n2: f64,
    /// Noise variance σ_d² on derivative observations (fixed, not optimized).
    pub sigma_d2: f64,
}

impl Hyperparams {
    /// Creates parameters with noiseless derivatives (`sigma_d2 = 0`).
    pub fn new(sigma_f2: f64, ell: f64, sigma_n2: f64) -> Self {
        Self { sigma_f2, ell, sigma_n2, sigma_d2: 0.0 }
    }

    fn validate(&self) -> Result<(), GpError> {
        let ok = self.sigma_f2 > 0.0
            && self.ell > 0.0
            && self.sigma_n2 >= 0.0
            && self.sigma_d2 >= 0.0
            && self.sigma_f2.is_finite()
            && self.ell.is_finite()
            && self.sigma_n2.is_finite()
            && self.sigma_d2.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GpError::NonFinite)
        }
    }
}

/// One training point: an input, the observed value, and the observed gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GpObservation {
    /// Input location (length = model dimension).
    pub x: DVector<f64>,
    /// Observed function value.
    pub t: f64,
    /// Observed gradient of the function at `x` (length = model dimension).
    pub t_grad: DVector<f64>,
}

impl GpObservation {
    /// Bundles an observation, validating finiteness.
    pub fn new(x: DVector<f64>, t: f64, t_grad: DVector<f64>) -> Result<Self, GpError> {
        if x.len() != t_grad.len() {
            return Err(GpError::DimensionMismatch { expected: x.len(), got: t_grad.len() });
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) || t_grad.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok(Self { x, t, t_grad })
    }
}

/// Posterior mean, variance, and mean gradient at a query point.
#[derive(Debug, Clone)]
pub struct GpPrediction {
    /// Posterior mean E[f(x*)].
    pub mean: f64,
    /// Noiseless posterior variance V[f(x*)] (≥ 0; tiny negative round-off is
    /// clamped to zero).
    pub variance: f64,
    /// Gradient of the posterior mean, ∂E[f]/∂x*.
    pub mean_grad: DVector<f64>,
}

impl GpPrediction {
    /// Predictive variance of a *noisy* observation at the query point,
    /// i.e. the noiseless variance plus σ_n².
    pub fn variance_with_noise(&self, hyper: &Hyperparams) -> f64 {
        self.variance + hyper.sigma_n2
    }
}

/// Squared-exponential kernel `k(a, b) = σ_f² exp(−‖a − b‖² / (2ℓ²))`.
pub fn kernel(a: &DVector<f64>, b: &DVector<f64>, h: &Hyperparams) -> f64 {
    let r2 = (a - b).norm_squared();
    h.sigma_f2 * (-r2 / (2.0 * h.ell * h.ell)).exp()
}

/// Derivative of the kernel with respect to its *first* argument:
/// `∂k(a, b)/∂a = −(a − b) k(a, b) / ℓ²`.
pub fn kernel_d1(a: &DVector<f64>, b: &DVector<f64>, h: &Hyperparams) -> DVector<f64> {
    let d = a - b;
    let k = h.sigma_f2 * (-d.norm_squared() / (2.0 * h.ell * h.ell)).exp();
    d * (-k / (h.ell * h.ell))
}

/// Mixed second derivative `∂²k(a, b)/∂a ∂b`, the covariance between the
/// gradients at `a` and `b`:
/// `(I/ℓ² − (a − b)(a − b)ᵀ/ℓ⁴) k(a, b)`.
pub fn kernel_d2(a: &DVector<f64>, b: &DVector<f64>, h: &Hyperparams) -> DMatrix<f64> {
    let d = a - b;
    let ell2 = h.ell * h.ell;
    let k = h.sigma_f2 * (-d.norm_squared() / (2.0 * ell2)).exp();
    let mut m = &d * d.transpose() * (-k / (ell2 * ell2));
    for i in 0..d.len() {
        m[(i, i)] += k / ell2;
    }
    m
}

/// Builds the joint covariance over values and gradients for a set of
/// observations. Row/column layout: value rows `0..N` first, then the
/// gradient block of observation `p` at rows `N + p·D .. N + (p+1)·D`.
pub fn assemble_joint_covariance(
    obs: &[GpObservation],
    h: &Hyperparams,
) -> Result<SymMatrix, GpError> {
    if obs.is_empty() {
        return Err(GpError::EmptyModel);
    }
    let n = obs.len();
    let dim = obs[0].x.len();
    let m = n * (dim + 1);
    let mut k = DMatrix::zeros(m, m);
    for p in 0..n {
        for q in p..n {
            let koo = kernel(&obs[p].x, &obs[q].x, h);
            // Value/value block.
            k[(p, q)] = koo;
            k[(q, p)] = koo;
            // Value/gradient cross blocks: cov(t_p, ∇t_q) = ∂k(x_q, x_p)/∂x_q.
            let kd_qp = kernel_d1(&obs[q].x, &obs[p].x, h);
            let kd_pq = kernel_d1(&obs[p].x, &obs[q].x, h);
            for a in 0..dim {
                k[(p, n + q * dim + a)] = kd_qp[a];
                k[(n + q * dim + a, p)] = kd_qp[a];
                k[(q, n + p * dim + a)] = kd_pq[a];
                k[(n + p * dim + a, q)] = kd_pq[a];
            }
            // Gradient/gradient block; symmetric in (p, a) ↔ (q, b).
            let kdd = kernel_d2(&obs[p].x, &obs[q].x, h);
            for a in 0..dim {
                for b in 0..dim {
                    k[(n + p * dim + a, n + q * dim + b)] = kdd[(a, b)];
                    k[(n + q * dim + b, n + p * dim + a)] = kdd[(a, b)];
                }
            }
        }
        k[(p, p)] += h.sigma_n2;
        for a in 0..dim {
            let i = n + p * dim + a;
            k[(i, i)] += h.sigma_d2;
        }
    }
    Ok(SymMatrix::new(k).expect("joint covariance is symmetric by construction"))
}

/// Stacks observed values and gradients into the joint target vector
/// `t̄ = [t_1 … t_N, ∇t_1 … ∇t_N]`.
fn stack_targets(obs: &[GpObservation]) -> DVector<f64> {
    let n = obs.len();
    let dim = obs[0].x.len();
    let mut t = DVector::zeros(n * (dim + 1));
    for (p, o) in obs.iter().enumerate() {
        t[p] = o.t;
        for a in 0..dim {
            t[n + p * dim + a] = o.t_grad[a];
        }
    }
    t
}

/// A gradient-enhanced GP conditioned on a mutable observation set.
///
/// Mutating calls (`add_observation`, `replace_observation`, `set_hyper`)
/// invalidate the stored factorization; `refresh()` rebuilds it. Queries on a
/// stale model return [`GpError::StaleFactorization`] rather than silently
/// using outdated state.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: Hyperparams,
    obs: Vec<GpObservation>,
    dim: usize,
    factor: Option<CholFactor>,
    alpha: Option<DVector<f64>>,
    log_ml: f64,
    version: u64,
    refreshed_version: u64,
}

impl GpModel {
    /// Creates an empty model over a `dim`-dimensional input space.
    pub fn new(dim: usize, hyper: Hyperparams) -> Self {
        assert!(dim > 0, "model dimension must be positive");
        Self {
            hyper,
            obs: Vec::new(),
            dim,
            factor: None,
            alpha: None,
            log_ml: f64::NAN,
            version: 0,
            refreshed_version: u64::MAX,
        }
    }

    /// Input-space dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of observations `N` (the joint system has `N(D+1)` rows).
    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    /// Current hyperparameters.
    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Replaces the hyperparameters, invalidating the factorization.
    pub fn set_hyper(&mut self, hyper: Hyperparams) {
        self.hyper = hyper;
        self.version += 1;
    }

    /// Read-only view of the observation set.
    pub fn observations(&self) -> &[GpObservation] {
        &self.obs
    }

    /// Appends an observation and returns its row index. Invalidates the
    /// factorization.
    pub fn add_observation(&mut self, o: GpObservation) -> Result<usize, GpError> {
        self.check_obs(&o)?;
        self.obs.push(o);
        self.version += 1;
        Ok(self.obs.len() - 1)
    }

    /// Overwrites the observation at `idx` in place (used when a tracked
    /// training point is re-solved at an updated input). Invalidates the
    /// factorization.
    pub fn replace_observation(&mut self, idx: usize, o: GpObservation) -> Result<(), GpError> {
        if idx >= self.obs.len() {
            return Err(GpError::DimensionMismatch { expected: self.obs.len(), got: idx });
        }
        self.check_obs(&o)?;
        self.obs[idx] = o;
        self.version += 1;
        Ok(())
    }

    fn check_obs(&self, o: &GpObservation) -> Result<(), GpError> {
        if o.x.len() != self.dim {
            return Err(GpError::DimensionMismatch { expected: self.dim, got: o.x.len() });
        }
        if !o.t.is_finite()
            || o.x.iter().any(|v| !v.is_finite())
            || o.t_grad.iter().any(|v| !v.is_finite())
        {
            return Err(GpError::NonFinite);
        }
        Ok(())
    }

    /// Whether the stored factorization matches the current observations and
    /// hyperparameters.
    pub fn is_fresh(&self) -> bool {
        self.factor.is_some() && self.refreshed_version == self.version
    }

    /// Rebuilds the joint covariance, factorizes it, and solves for the
    /// weight vector `α = K̄⁻¹ t̄`. Also evaluates the log marginal
    /// likelihood. Must be called after any mutation before querying.
    pub fn refresh(&mut self) -> Result<(), GpError> {
        self.hyper.validate()?;
        if self.obs.is_empty() {
            return Err(GpError::EmptyModel);
        }
        let kbar = assemble_joint_covariance(&self.obs, &self.hyper)?;
        // Scale the base jitter to the problem: 1e-10 of the mean diagonal.
        // With noiseless gradient blocks, nearby inputs make the joint
        // covariance ill conditioned long before Cholesky actually fails,
        // so the ridge has to be present from the first factorization —
        // escalation alone would accept garbage coefficients.
        let mean_diag = kbar.as_matrix().diagonal().mean();
        let factor = numerics::cholesky_with_jitter(&kbar, 1e-10 * mean_diag.max(1e-300), 12)?;
        let t = stack_targets(&self.obs);
        let alpha = numerics::chol_solve(&factor, &t)?;
        let m = t.len() as f64;
        self.log_ml = -0.5 * t.dot(&alpha)
            - 0.5 * factor.log_det()
            - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
        self.factor = Some(factor);
        self.alpha = Some(alpha);
        self.refreshed_version = self.version;
        Ok(())
    }

    fn fresh_parts(&self) -> Result<(&CholFactor, &DVector<f64>), GpError> {
        match (&self.factor, &self.alpha) {
            (Some(f), Some(a)) if self.refreshed_version == self.version => Ok((f, a)),
            (Some(_), Some(_)) => Err(GpError::StaleFactorization),
            _ => Err(GpError::NeverRefreshed),
        }
    }

    /// Log marginal likelihood of the current observations,
    /// `log p(t̄ | X, θ) = −½ t̄ᵀα − ½ log|K̄| − (M/2) log 2π`.
    pub fn log_ml(&self) -> Result<f64, GpError> {
        self.fresh_parts()?;
        Ok(self.log_ml)
    }

    /// Joint covariance vector between the training rows and a query point:
    /// `k̄* = [k(x_p, x*) …, ∂k(x_p, x*)/∂x_p …]`.
    fn kbar_star(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.obs.len();
        let mut v = DVector::zeros(n * (self.dim + 1));
        for (p, o) in self.obs.iter().enumerate() {
            v[p] = kernel(&o.x, x, &self.hyper);
            let kd = kernel_d1(&o.x, x, &self.hyper);
            for a in 0..self.dim {
                v[n + p * self.dim + a] = kd[a];
            }
        }
        v
    }

    fn check_query(&self, x: &DVector<f64>) -> Result<(), GpError> {
        if x.len() != self.dim {
            return Err(GpError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok(())
    }

    /// Posterior mean, noiseless variance, and mean gradient at `x`.
    pub fn predict(&self, x: &DVector<f64>) -> Result<GpPrediction, GpError> {
        self.check_query(x)?;
        let (factor, alpha) = self.fresh_parts()?;
        let kstar = self.kbar_star(x);
        let mean = kstar.dot(alpha);
        let w = factor.solve_lower(&kstar)?;
        let variance = (self.hyper.sigma_f2 - w.norm_squared()).max(0.0);

        // ∂mean/∂x* = Σ_p α_p ∂k(x*, x_p)/∂x* + Σ_p k''(x_p, x*)ᵀ α_{∇,p}
        let n = self.obs.len();
        let mut mean_grad = DVector::zeros(self.dim);
        for (p, o) in self.obs.iter().enumerate() {
            let kd = kernel_d1(x, &o.x, &self.hyper);
            mean_grad.axpy(alpha[p], &kd, 1.0);
            let kdd = kernel_d2(&o.x, x, &self.hyper);
            for b in 0..self.dim {
                let mut s = 0.0;
                for a in 0..self.dim {
                    s += alpha[n + p * self.dim + a] * kdd[(a, b)];
                }
                mean_grad[b] += s;
            }
        }
        Ok(GpPrediction { mean, variance, mean_grad })
    }

    /// Noiseless posterior variance only (cheaper than [`predict`] when the
    /// mean and its gradient are not needed, e.g. error sweeps).
    ///
    /// [`predict`]: GpModel::predict
    pub fn predict_variance(&self, x: &DVector<f64>) -> Result<f64, GpError> {
        self.check_query(x)?;
        let (factor, _) = self.fresh_parts()?;
        let kstar = self.kbar_star(x);
        let w = factor.solve_lower(&kstar)?;
        Ok((self.hyper.sigma_f2 - w.norm_squared()).max(0.0))
    }

    /// Gradient of the log marginal likelihood with respect to
    /// `(σ_f², σ_n², ℓ)`, in that order:
    ///
    /// ```text
    /// ∂ log p/∂θ = ½ αᵀ (∂K̄/∂θ) α − ½ tr(K̄⁻¹ ∂K̄/∂θ)
    /// ```
    ///
    /// The trace term uses the explicit inverse from the stored factor; at
    /// the model sizes used here (a few hundred rows) this is cheap and
    /// robust.
    pub fn log_ml_gradient(&self) -> Result<DVector<f64>, GpError> {
        let (factor, alpha) = self.fresh_parts()?;
        let kinv = factor.inverse();
        let n = self.obs.len();
        let h = &self.hyper;
        let m = n * (self.dim + 1);

        // ∂K̄/∂σ_f²: every covariance entry scales linearly with σ_f², so this
        // is (K̄ − noise diagonal)/σ_f². ∂K̄/∂σ_n²: identity restricted to the
        // value rows. ∂K̄/∂ℓ: assembled from the kernel derivative formulas.
        let kbar = assemble_joint_covariance(&self.obs, h)?;
        let mut dk_f2 = kbar.into_matrix();
        for p in 0..n {
            dk_f2[(p, p)] -= h.sigma_n2;
        }
        for i in n..m {
            dk_f2[(i, i)] -= h.sigma_d2;
        }
        dk_f2 /= h.sigma_f2;

        let mut dk_ell = DMatrix::zeros(m, m);
        let ell = h.ell;
        for p in 0..n {
            for q in 0..n {
                let d = &self.obs[p].x - &self.obs[q].x;
                let r2 = d.norm_squared();
                let k = h.sigma_f2 * (-r2 / (2.0 * ell * ell)).exp();
                // ∂k/∂ℓ = k r²/ℓ³
                dk_ell[(p, q)] = k * r2 / ell.powi(3);
                // ∂/∂ℓ of ∂k(x_q, x_p)/∂x_q = −(x_q − x_p) k/ℓ²:
                //   −d_qp [∂k/∂ℓ · ℓ⁻² − 2k ℓ⁻³] = d_qp · k (2ℓ² − r²)/ℓ⁵
                for a in 0..self.dim {
                    let v = -d[a] * k * (2.0 * ell * ell - r2) / ell.powi(5);
                    dk_ell[(p, n + q * self.dim + a)] = v;
                    dk_ell[(n + q * self.dim + a, p)] = v;
                }
                // ∂/∂ℓ of k''(x_p, x_q) = (I/ℓ² − ddᵀ/ℓ⁴) k:
                //   I k (r² − 2ℓ²)/ℓ⁵ − ddᵀ k (r² − 4ℓ²)/ℓ⁷
                let ci = k * (r2 - 2.0 * ell * ell) / ell.powi(5);
                let cd = k * (r2 - 4.0 * ell * ell) / ell.powi(7);
                for a in 0..self.dim {
                    for b in 0..self.dim {
                        let mut v = -d[a] * d[b] * cd;
                        if a == b {
                            v += ci;
                        }
                        dk_ell[(n + p * self.dim + a, n + q * self.dim + b)] = v;
                    }
                }
            }
        }

        let quad = |dk: &DMatrix<f64>| -> f64 {
            let da = dk * alpha;
            0.5 * alpha.dot(&da) - 0.5 * kinv.zip_fold(dk, 0.0, |acc, a, b| acc + a * b)
        };

        let mut g = DVector::zeros(3);
        g[0] = quad(&dk_f2);
        // ∂K̄/∂σ_n² contributes only on the value diagonal.
        let mut g_n2 = 0.0;
        for p in 0..n {
            g_n2 += 0.5 * alpha[p] * alpha[p] - 0.5 * kinv[(p, p)];
        }
        g[1] = g_n2;
        g[2] = quad(&dk_ell);
        Ok(g)
    }

    /// Writes the observation set as CSV, preceded by a `#` comment line with
    /// the hyperparameters and log marginal likelihood. Intended for
    /// debugging and post-processing.
    pub fn dump_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "# hyperparams: sigma_f2={:e} ell={:e} sigma_n2={:e} sigma_d2={:e} log_ml={:e}",
            self.hyper.sigma_f2,
            self.hyper.ell,
            self.hyper.sigma_n2,
            self.hyper.sigma_d2,
            if self.is_fresh() { self.log_ml } else { f64::NAN },
        )?;
        let xs: Vec<String> = (0..self.dim).map(|a| format!("x_{a}")).collect();
        let gs: Vec<String> = (0..self.dim).map(|a| format!("g_{a}")).collect();
        writeln!(w, "{},t,{}", xs.join(","), gs.join(","))?;
        for o in &self.obs {
            let xv: Vec<String> = o.x.iter().map(|v| format!("{v:e}")).collect();
            let gv: Vec<String> = o.t_grad.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{:e},{}", xv.join(","), o.t, gv.join(","))?;
        }
        Ok(())
    }
}

/// Lower bounds enforced during hyperparameter optimization.
#[derive(Debug, Clone, Copy)]
pub struct HyperBounds {
    /// Minimum signal variance σ_f².
    pub sigma_f2_min: f64,
    /// Minimum length scale ℓ.
    pub ell_min: f64,
    /// Minimum noise variance σ_n².
    pub sigma_n2_min: f64,
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self { sigma_f2_min: 1e-8, ell_min: 1e-6, sigma_n2_min: 0.0 }
    }
}

/// Optimizer settings for [`optimize_hyperparams`].
#[derive(Debug, Clone, Copy)]
pub struct OptimizeSettings {
    /// Randomized restarts beyond the supplied start (total starts =
    /// `restarts`, the first of which is the unperturbed start).
    pub restarts: usize,
    /// BFGS gradient-norm tolerance.
    pub tol: f64,
    /// BFGS iteration cap per start.
    pub max_iter: usize,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        Self { restarts: 3, tol: 1e-6, max_iter: 200 }
    }
}

/// Fits `(σ_f², σ_n², ℓ)` by maximizing the log marginal likelihood of the
/// model's observations.
///
/// The search runs in log-space — `param = bound + exp(θ)` — which keeps every
/// trial strictly inside the bounds. The first start is `x0`; the remaining
/// `restarts − 1` starts perturb each log-coordinate by U(−2, 2) draws from a
/// ChaCha8 stream seeded with `seed`, so results are reproducible. Starts
/// whose covariance cannot be factorized are skipped; the best optimum over
/// all successful starts is returned. `σ_d²` is carried over from `x0`
/// unchanged.
pub fn optimize_hyperparams(
    model: &GpModel,
    x0: &Hyperparams,
    bounds: &HyperBounds,
    seed: u64,
    settings: &OptimizeSettings,
) -> Result<Hyperparams, GpError> {
    if model.n_obs() == 0 {
        return Err(GpError::EmptyModel);
    }
    x0.validate()?;
    let lb = [bounds.sigma_f2_min, bounds.sigma_n2_min, bounds.ell_min];
    let theta_of = |h: &Hyperparams| {
        let p = [h.sigma_f2, h.sigma_n2, h.ell];
        DVector::from_iterator(3, (0..3).map(|j| (p[j] - lb[j]).max(1e-12).ln()))
    };
    let theta0 = theta_of(x0);

    // A second deterministic start matched to the data scale: σ_f² from the
    // sample variance of the values and ℓ from the median pairwise distance.
    // Cold starts far from the data scale tend to fall into the degenerate
    // "all noise" optimum; this start rarely does.
    let mut heur = *x0;
    let obs = model.observations();
    let mean_t = obs.iter().map(|o| o.t).sum::<f64>() / obs.len() as f64;
    let var_t = obs.iter().map(|o| (o.t - mean_t).powi(2)).sum::<f64>() / obs.len() as f64;
    if var_t > 0.0 {
        heur.sigma_f2 = var_t;
    }
    let mut dists: Vec<f64> = Vec::new();
    for p in 0..obs.len() {
        for q in (p + 1)..obs.len() {
            let d = (&obs[p].x - &obs[q].x).norm();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if !dists.is_empty() {
        dists.sort_by(f64::total_cmp);
        heur.ell = dists[dists.len() / 2];
    }
    let theta_heur = theta_of(&heur);

    let params_of = |theta: &DVector<f64>| Hyperparams {
        sigma_f2: lb[0] + theta[0].exp(),
        sigma_n2: lb[1] + theta[1].exp(),
        ell: lb[2] + theta[2].exp(),
        sigma_d2: x0.sigma_d2,
    };

    let mut scratch = model.clone();
    let mut objective = |theta: &DVector<f64>| -> (f64, DVector<f64>) {
        scratch.set_hyper(params_of(theta));
        if scratch.refresh().is_err() {
            // Non-PD trial: reject the step (treated as non-finite by the
            // line search) rather than aborting the whole fit.
            return (f64::INFINITY, DVector::zeros(3));
        }
        let f = -scratch.log_ml;
        let g = match scratch.log_ml_gradient() {
            Ok(g) => g,
            Err(_) => return (f64::INFINITY, DVector::zeros(3)),
        };
        // Chain rule through param = bound + exp(θ): dθ_j = d_param · exp(θ_j).
        let gt = DVector::from_iterator(3, (0..3).map(|j| -g[j] * theta[j].exp()));
        (f, gt)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let n_starts = settings.restarts.max(1);
    for attempt in 0..n_starts {
        let mut theta = match attempt {
            0 => theta0.clone(),
            1 => theta_heur.clone(),
            _ => theta0.clone(),
        };
        if attempt > 1 {
            for j in 0..3 {
                theta[j] += rng.gen_range(-2.0..2.0);
            }
        }
        match numerics::bfgs_minimize(&mut objective, theta, settings.tol, settings.max_iter) {
            Ok(res) => {
                if res.f.is_finite() && best.as_ref().map_or(true, |(bf, _)| res.f < *bf) {
                    best = Some((res.f, res.x));
                }
            }
            Err(_) => continue,
        }
    }
    match best {
        Some((_, theta)) => Ok(params_of(&theta)),
        None => Err(GpError::OptimizationFailed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    fn unit_hypers() -> Hyperparams {
        Hyperparams::new(1.0, 1.0, 1.0)
    }

    #[test]
    fn kernel_values() {
        let h = Hyperparams::new(2.0, 0.5, 0.0);
        // At zero distance the kernel equals the signal variance.
        assert_abs_diff_eq!(kernel(&v(&[0.3]), &v(&[0.3]), &h), 2.0, epsilon = 1e-15);
        // σ_f² exp(−r²/(2ℓ²)) with r = 0.5, ℓ = 0.5 → 2 e^{−1/2}.
        assert_relative_eq!(
            kernel(&v(&[0.0]), &v(&[0.5]), &h),
            2.0 * (-0.5_f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn kernel_d1_matches_finite_differences() {
        let h = Hyperparams::new(1.7, 0.8, 0.0);
        let a = v(&[0.4, -0.2, 1.1]);
        let b = v(&[-0.3, 0.5, 0.9]);
        let g = kernel_d1(&a, &b, &h);
        let eps = 1e-6;
        for i in 0..3 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += eps;
            am[i] -= eps;
            let fd = (kernel(&ap, &b, &h) - kernel(&am, &b, &h)) / (2.0 * eps);
            assert_relative_eq!(g[i], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn kernel_d2_matches_finite_differences() {
        let h = Hyperparams::new(0.9, 1.3, 0.0);
        let a = v(&[0.4, -0.2]);
        let b = v(&[-0.3, 0.5]);
        let m = kernel_d2(&a, &b, &h);
        let eps = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                // ∂²k/∂a_i∂b_j via central differences of kernel_d1 in b_j.
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[j] += eps;
                bm[j] -= eps;
                let fd = (kernel_d1(&a, &bp, &h)[i] - kernel_d1(&a, &bm, &h)[i]) / (2.0 * eps);
                assert_relative_eq!(m[(i, j)], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn kernel_d2_is_symmetric_under_argument_swap() {
        let h = Hyperparams::new(1.0, 0.7, 0.0);
        let a = v(&[0.2, 0.9]);
        let b = v(&[-0.4, 0.1]);
        let m1 = kernel_d2(&a, &b, &h);
        let m2 = kernel_d2(&b, &a, &h);
        assert_abs_diff_eq!((m1 - m2.transpose()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn joint_covariance_single_point_unit_hypers() {
        // One observation at the origin in 1-D with unit hyperparameters:
        // K̄ = [[σ_f² + σ_n², 0], [0, σ_f²/ℓ²]] = I·... here [[2, 0], [0, 1]].
        let obs = vec![GpObservation::new(v(&[0.0]), 1.0, v(&[0.0])).unwrap()];
        let h = unit_hypers();
        let k = assemble_joint_covariance(&obs, &h).unwrap();
        let k = k.as_matrix();
        assert_abs_diff_eq!(k[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(1, 1)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn joint_covariance_is_positive_definite() {
        let h = Hyperparams::new(1.5, 0.6, 0.01);
        let obs: Vec<GpObservation> = (0..5)
            .map(|i| {
                let x = v(&[0.3 * i as f64, (i as f64).sin()]);
                GpObservation::new(x, i as f64, v(&[1.0, -0.5])).unwrap()
            })
            .collect();
        let k = assemble_joint_covariance(&obs, &h).unwrap();
        let eig = k.as_matrix().clone().symmetric_eigenvalues();
        assert!(
            eig.iter().all(|&l| l > 0.0),
            "joint covariance should be PD, eigenvalues {eig:?}"
        );
    }

    #[test]
    fn log_ml_closed_form_single_unit_observation() {
        // N = 1, D = 1, t = 1, ∇t = 0, unit hyperparameters: K̄ = diag(2, 1),
        // so log p = −½·½ − ½ ln 2 − ln 2π = −2.0841…; with σ_n² = 0 instead,
        // K̄ = I and log p = −½ − ln 2π = −2.337877…
        let mut model = GpModel::new(1, Hyperparams::new(1.0, 1.0, 0.0));
        model
            .add_observation(GpObservation::new(v(&[0.0]), 1.0, v(&[0.0])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        let expected = -0.5 - (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(model.log_ml().unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(model.log_ml().unwrap(), -2.3379, epsilon = 5e-5);
    }

    #[test]
    fn interpolates_noiseless_values_and_gradients() {
        // With σ_n² = σ_d² = 0 the posterior mean must reproduce the data.
        let h = Hyperparams::new(1.2, 0.9, 0.0);
        let mut model = GpModel::new(1, h);
        let f = |x: f64| (1.5 * x).sin();
        let fp = |x: f64| 1.5 * (1.5 * x).cos();
        for &x in &[-0.8, -0.1, 0.5, 1.3] {
            model
                .add_observation(GpObservation::new(v(&[x]), f(x), v(&[fp(x)])).unwrap())
                .unwrap();
        }
        model.refresh().unwrap();
        for &x in &[-0.8, -0.1, 0.5, 1.3] {
            let p = model.predict(&v(&[x])).unwrap();
            assert_abs_diff_eq!(p.mean, f(x), epsilon = 1e-7);
            assert_abs_diff_eq!(p.mean_grad[0], fp(x), epsilon = 1e-6);
            assert!(p.variance < 1e-7, "variance at a training point: {}", p.variance);
        }
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let h = Hyperparams::new(2.5, 0.4, 0.0);
        let mut model = GpModel::new(1, h);
        model
            .add_observation(GpObservation::new(v(&[0.0]), 3.0, v(&[-1.0])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        let p = model.predict(&v(&[50.0])).unwrap();
        assert_abs_diff_eq!(p.mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mean_grad.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn predictive_mean_gradient_matches_finite_differences() {
        let h = Hyperparams::new(1.1, 0.7, 0.01);
        let mut model = GpModel::new(2, h);
        for i in 0..4 {
            let x = v(&[0.4 * i as f64 - 0.6, 0.3 * (i as f64).cos()]);
            let t = x[0] * x[0] - x[1];
            model
                .add_observation(GpObservation::new(x.clone(), t, v(&[2.0 * x[0], -1.0])).unwrap())
                .unwrap();
        }
        model.refresh().unwrap();
        let q = v(&[0.25, -0.15]);
        let p = model.predict(&q).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += eps;
            qm[i] -= eps;
            let fd = (model.predict(&qp).unwrap().mean - model.predict(&qm).unwrap().mean)
                / (2.0 * eps);
            assert_relative_eq!(p.mean_grad[i], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn stale_model_refuses_to_predict() {
        let mut model = GpModel::new(1, unit_hypers());
        model
            .add_observation(GpObservation::new(v(&[0.0]), 1.0, v(&[0.0])).unwrap())
            .unwrap();
        assert!(matches!(model.predict(&v(&[0.0])), Err(GpError::NeverRefreshed)));
        model.refresh().unwrap();
        assert!(model.predict(&v(&[0.0])).is_ok());
        model
            .add_observation(GpObservation::new(v(&[1.0]), 0.5, v(&[0.2])).unwrap())
            .unwrap();
        assert!(matches!(model.predict(&v(&[0.0])), Err(GpError::StaleFactorization)));
        model.refresh().unwrap();
        assert!(model.predict(&v(&[0.0])).is_ok());
    }

    #[test]
    fn replace_observation_updates_the_posterior() {
        let mut model = GpModel::new(1, Hyperparams::new(1.0, 1.0, 0.0));
        let idx = model
            .add_observation(GpObservation::new(v(&[0.0]), 1.0, v(&[0.0])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        // Reproduction at a training input is exact up to the conditioning
        // ridge applied during factorization.
        assert_abs_diff_eq!(model.predict(&v(&[0.0])).unwrap().mean, 1.0, epsilon = 1e-8);
        model
            .replace_observation(idx, GpObservation::new(v(&[0.0]), -2.0, v(&[0.0])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        assert_abs_diff_eq!(model.predict(&v(&[0.0])).unwrap().mean, -2.0, epsilon = 1e-8);
    }

    #[test]
    fn log_ml_gradient_matches_finite_differences() {
        let mut model = GpModel::new(2, Hyperparams::new(1.4, 0.8, 0.05));
        for i in 0..5 {
            let x = v(&[0.35 * i as f64, (0.8 * i as f64).sin()]);
            let t = (x[0] - 0.5 * x[1]).cos();
            let g = v(&[-(x[0] - 0.5 * x[1]).sin(), 0.5 * (x[0] - 0.5 * x[1]).sin()]);
            model.add_observation(GpObservation::new(x, t, g).unwrap()).unwrap();
        }
        model.refresh().unwrap();
        let grad = model.log_ml_gradient().unwrap();

        let eps = 1e-6;
        let base = *model.hyper();
        let mut fd = [0.0; 3];
        for (j, setter) in [
            (0usize, (|h: &mut Hyperparams, v: f64| h.sigma_f2 = v) as fn(&mut Hyperparams, f64)),
            (1usize, |h: &mut Hyperparams, v: f64| h.sigma_n2 = v),
            (2usize, |h: &mut Hyperparams, v: f64| h.ell = v),
        ] {
            let get = |h: &Hyperparams| match j {
                0 => h.sigma_f2,
                1 => h.sigma_n2,
                _ => h.ell,
            };
            let mut hp = base;
            setter(&mut hp, get(&base) + eps);
            model.set_hyper(hp);
            model.refresh().unwrap();
            let fp = model.log_ml().unwrap();
            let mut hm = base;
            setter(&mut hm, get(&base) - eps);
            model.set_hyper(hm);
            model.refresh().unwrap();
            let fm = model.log_ml().unwrap();
            fd[j] = (fp - fm) / (2.0 * eps);
        }
        for j in 0..3 {
            assert_relative_eq!(grad[j], fd[j], max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn optimization_recovers_generating_hyperparameters() {
        // Draw one sample path (values + gradients) from a known GP prior and
        // check that the fitted length scale and signal variance land within
        // a factor of two of the generating values.
        use rand::Rng;
        let truth = Hyperparams::new(4.0, 0.5, 1e-4);
        let xs: Vec<DVector<f64>> = (0..30).map(|i| v(&[0.1 * i as f64])).collect();
        let obs_proto: Vec<GpObservation> = xs
            .iter()
            .map(|x| GpObservation::new(x.clone(), 0.0, v(&[0.0])).unwrap())
            .collect();
        let kbar = assemble_joint_covariance(&obs_proto, &truth).unwrap();
        let factor = numerics::cholesky_with_jitter(&kbar, 1e-12, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = DVector::from_iterator(60, (0..60).map(|_| {
            // Box–Muller from two uniform draws keeps the dependency set small.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }));
        let sample = factor.l() * z;

        let mut model = GpModel::new(1, truth);
        for (i, x) in xs.iter().enumerate() {
            model
                .add_observation(
                    GpObservation::new(x.clone(), sample[i], v(&[sample[30 + i]])).unwrap(),
                )
                .unwrap();
        }
        let start = Hyperparams::new(1.0, 1.0, 1e-3);
        // Inputs 0.2 length scales apart with nearly noiseless gradients
        // make a deceptive landscape: a small-signal/large-noise local
        // optimum sits between the start and the generating basin, so the
        // search needs a generous restart budget.
        let fitted = optimize_hyperparams(
            &model,
            &start,
            &HyperBounds::default(),
            11,
            &OptimizeSettings { restarts: 8, ..OptimizeSettings::default() },
        )
        .unwrap();
        assert!(
            fitted.ell > 0.25 && fitted.ell < 1.0,
            "length scale {} should be near 0.5",
            fitted.ell
        );
        assert!(
            fitted.sigma_f2 > 1.0 && fitted.sigma_f2 < 16.0,
            "signal variance {} should be near 4",
            fitted.sigma_f2
        );

        // The fit must not lose likelihood relative to the truth.  The
        // conditioning ridge scales with the hyperparameters, so the two
        // evaluations see marginally different regularizations; the margin
        // absorbs that.
        model.set_hyper(truth);
        model.refresh().unwrap();
        let lml_truth = model.log_ml().unwrap();
        model.set_hyper(fitted);
        model.refresh().unwrap();
        assert!(model.log_ml().unwrap() >= lml_truth - 1e-4);
    }

    #[test]
    fn optimization_respects_noise_floor() {
        let mut model = GpModel::new(1, unit_hypers());
        for i in 0..6 {
            let x = 0.4 * i as f64;
            model
                .add_observation(GpObservation::new(v(&[x]), x.sin(), v(&[x.cos()])).unwrap())
                .unwrap();
        }
        let bounds = HyperBounds { sigma_n2_min: 1.0, ..HyperBounds::default() };
        let fitted = optimize_hyperparams(
            &model,
            &Hyperparams::new(1.0, 1.0, 2.0),
            &bounds,
            3,
            &OptimizeSettings::default(),
        )
        .unwrap();
        assert!(fitted.sigma_n2 >= 1.0, "noise floor violated: {}", fitted.sigma_n2);
    }

    #[test]
    fn optimization_is_deterministic_for_a_fixed_seed() {
        let mut model = GpModel::new(1, unit_hypers());
        for i in 0..5 {
            let x = 0.3 * i as f64;
            model
                .add_observation(
                    GpObservation::new(v(&[x]), (2.0 * x).sin(), v(&[2.0 * (2.0 * x).cos()]))
                        .unwrap(),
                )
                .unwrap();
        }
        let start = Hyperparams::new(0.5, 0.3, 0.01);
        let a = optimize_hyperparams(
            &model,
            &start,
            &HyperBounds::default(),
            42,
            &OptimizeSettings::default(),
        )
        .unwrap();
        let b = optimize_hyperparams(
            &model,
            &start,
            &HyperBounds::default(),
            42,
            &OptimizeSettings::default(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_with_noise_adds_sigma_n2() {
        let h = Hyperparams::new(1.0, 1.0, 0.3);
        let mut model = GpModel::new(1, h);
        model
            .add_observation(GpObservation::new(v(&[0.0]), 1.0, v(&[0.0])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        let p = model.predict(&v(&[0.4])).unwrap();
        assert_abs_diff_eq!(p.variance_with_noise(&h), p.variance + 0.3, epsilon = 1e-15);
    }

    #[test]
    fn dump_csv_roundtrips_header_and_rows() {
        let mut model = GpModel::new(2, unit_hypers());
        model
            .add_observation(GpObservation::new(v(&[0.1, 0.2]), 3.0, v(&[0.5, -0.5])).unwrap())
            .unwrap();
        model.refresh().unwrap();
        let mut buf = Vec::new();
        model.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# hyperparams:"));
        assert_eq!(lines.next().unwrap(), "x_0,x_1,t,g_0,g_1");
        assert_eq!(lines.clone().count(), 1);
    }
}
