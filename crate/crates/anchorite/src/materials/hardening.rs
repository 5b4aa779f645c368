//! Saturation-type hardening curves: a constant plus two decaying
//! exponentials,
//!
//! ```text
//! σ(ε) = σ_∞ + a₁ e^(−ε/τ₁) + a₂ e^(−ε/τ₂)
//! ```
//!
//! With negative amplitudes `a₁, a₂` this starts at `σ_∞ + a₁ + a₂` and
//! saturates monotonically towards `σ_∞` — the usual shape for epoxy yield
//! curves.

/// A hardening law `σ(ε) = σ_∞ + a₁ e^(−ε/τ₁) + a₂ e^(−ε/τ₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardeningCurve {
    /// Saturation stress σ_∞ (MPa).
    pub sigma_inf: f64,
    /// Amplitude of the first exponential (MPa; negative for hardening).
    pub a1: f64,
    /// Decay constant of the first exponential (dimensionless strain).
    pub tau1: f64,
    /// Amplitude of the second exponential (MPa; negative for hardening).
    pub a2: f64,
    /// Decay constant of the second exponential (dimensionless strain).
    pub tau2: f64,
}

impl HardeningCurve {
    /// Creates a curve, checking that it stays positive and non-decreasing
    /// for non-negative strain (amplitudes ≤ 0, decay constants > 0,
    /// positive initial value).
    pub fn new(sigma_inf: f64, a1: f64, tau1: f64, a2: f64, tau2: f64) -> Self {
        assert!(tau1 > 0.0 && tau2 > 0.0, "decay constants must be positive");
        assert!(a1 <= 0.0 && a2 <= 0.0, "amplitudes must be non-positive for hardening");
        assert!(
            sigma_inf + a1 + a2 > 0.0,
            "initial yield stress must be positive, got {}",
            sigma_inf + a1 + a2
        );
        Self { sigma_inf, a1, tau1, a2, tau2 }
    }

    /// Yield stress at equivalent plastic strain `eps_p_eq`.
    pub fn value(&self, eps_p_eq: f64) -> f64 {
        self.sigma_inf
            + self.a1 * (-eps_p_eq / self.tau1).exp()
            + self.a2 * (-eps_p_eq / self.tau2).exp()
    }

    /// Hardening modulus `dσ/dε` at `eps_p_eq`.
    pub fn slope(&self, eps_p_eq: f64) -> f64 {
        -self.a1 / self.tau1 * (-eps_p_eq / self.tau1).exp()
            - self.a2 / self.tau2 * (-eps_p_eq / self.tau2).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Tensile yield curve of the epoxy used throughout the examples.
    fn epoxy_tension() -> HardeningCurve {
        HardeningCurve::new(64.80, -33.6, 0.003407, -10.21, 0.06493)
    }

    #[test]
    fn initial_and_saturated_values() {
        let c = epoxy_tension();
        assert_abs_diff_eq!(c.value(0.0), 20.99, epsilon = 1e-12);
        assert_relative_eq!(c.value(10.0), 64.80, max_relative = 1e-12);
    }

    #[test]
    fn initial_modulus() {
        let c = epoxy_tension();
        // 33.6/0.003407 + 10.21/0.06493
        assert_relative_eq!(c.slope(0.0), 10018.7, max_relative = 1e-4);
    }

    #[test]
    fn slope_matches_finite_differences() {
        let c = epoxy_tension();
        let h = 1e-7;
        for &x in &[0.001, 0.01, 0.1, 0.4] {
            let fd = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
            assert_relative_eq!(c.slope(x), fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn monotone_non_decreasing() {
        let c = epoxy_tension();
        let mut prev = c.value(0.0);
        for i in 1..=500 {
            let v = c.value(0.001 * i as f64);
            assert!(v >= prev, "hardening curve decreased at {}", 0.001 * i as f64);
            prev = v;
        }
    }
}
