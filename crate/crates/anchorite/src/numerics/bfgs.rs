//! BFGS quasi-Newton minimization with Armijo backtracking, following
//! Nocedal & Wright, *Numerical Optimization* (2nd ed., §6.1).
//!
//! The inverse Hessian approximation is kept explicitly; problem sizes here
//! are tiny (hyperparameter fits in ≤ 3 dimensions), so the dense update is
//! the simplest correct choice.

use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Sufficient-decrease constant for the Armijo condition.
const ARMIJO_C1: f64 = 1e-4;
/// Step halvings attempted before declaring the line search failed.
const MAX_BACKTRACKS: usize = 48;
/// Curvature threshold below which the BFGS update is skipped.
const CURVATURE_EPS: f64 = 1e-12;

/// Outcome of [`bfgs_minimize`].
#[derive(Debug, Clone)]
pub struct BfgsResult {
    /// Best point found.
    pub x: DVector<f64>,
    /// Objective value at `x`.
    pub f: f64,
    /// Gradient norm at `x`.
    pub grad_norm: f64,
    /// Whether `grad_norm ≤ tol` was reached within the iteration budget.
    pub converged: bool,
    /// Number of accepted quasi-Newton steps.
    pub iterations: usize,
}

/// Armijo backtracking from unit step along `d`; returns the accepted point,
/// value, gradient, and step length, or `None` if no trial satisfied the
/// sufficient-decrease condition.
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    d: &DVector<f64>,
    slope: f64,
) -> Option<(DVector<f64>, f64, DVector<f64>, f64)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let xt = x + alpha * d;
        let (ft, gt) = f(&xt);
        let finite = ft.is_finite() && gt.iter().all(|g| g.is_finite());
        if finite && ft <= fx + ARMIJO_C1 * alpha * slope {
            return Some((xt, ft, gt, alpha));
        }
        alpha *= 0.5;
    }
    None
}

/// Minimizes `f` starting from `x0`, stopping when the gradient norm drops
/// to `tol` or after `max_iter` accepted steps.
///
/// `f` must return the objective value and its gradient. The final value is
/// never larger than `f(x0)`: only Armijo-decreasing steps are accepted. A
/// non-finite objective or gradient at `x0` is an error; non-finite values
/// probed during the line search are treated as rejections and the step is
/// shortened instead.
pub fn bfgs_minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<BfgsResult, NumericsError>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    assert!(tol > 0.0, "tol must be positive");
    let n = x0.len();
    let (fx0, gx0) = f(&x0);
    if !fx0.is_finite() || gx0.iter().any(|g| !g.is_finite()) {
        return Err(NumericsError::NonFiniteObjective);
    }

    let mut x = x0;
    let mut fx = fx0;
    let mut gx = gx0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = gx.norm() <= tol;
    let mut h_scaled = false;

    while !converged && iterations < max_iter {
        let mut d = -(&h * &gx);
        let mut slope = d.dot(&gx);
        if !slope.is_finite() || slope >= 0.0 {
            // The approximation lost positive definiteness; restart from
            // steepest descent.
            h = DMatrix::identity(n, n);
            h_scaled = false;
            d = -&gx;
            slope = -gx.norm_squared();
        }
        if !h_scaled {
            // Until the first curvature pair calibrates H, the raw gradient
            // can be badly scaled; cap the trial step at unit length so the
            // line search starts from a sane distance.
            let len = d.norm();
            if len > 1.0 {
                d /= len;
                slope /= len;
            }
        }

        let mut accepted = line_search(&mut f, &x, fx, &d, slope);
        if accepted.is_none() && h_scaled {
            // The quasi-Newton direction failed; discard the curvature model
            // and retry once along (capped) steepest descent before giving up.
            h = DMatrix::identity(n, n);
            h_scaled = false;
            let mut d2 = -&gx;
            let mut slope2 = -gx.norm_squared();
            let len = d2.norm();
            if len > 1.0 {
                d2 /= len;
                slope2 /= len;
            }
            d = d2;
            accepted = line_search(&mut f, &x, fx, &d, slope2);
        }
        let Some((xt, ft, gt, alpha)) = accepted else {
            // No acceptable step along any direction: return the best point.
            break;
        };

        let s = alpha * &d;
        let y = &gt - &gx;
        let sy = s.dot(&y);
        if sy > CURVATURE_EPS * s.norm() * y.norm() {
            if !h_scaled {
                // Scale the initial inverse Hessian to the first curvature
                // pair (Nocedal & Wright, eq. 6.20) so step lengths match the
                // problem's natural scale from the start.
                h *= sy / y.norm_squared();
                h_scaled = true;
            }
            // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ, expanded to avoid temporaries.
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&s * hy.transpose() + &hy * s.transpose());
        }

        x = xt;
        fx = ft;
        gx = gt;
        iterations += 1;
        converged = gx.norm() <= tol;
    }

    Ok(BfgsResult { grad_norm: gx.norm(), x, f: fx, converged, iterations })
}
