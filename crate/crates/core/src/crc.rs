//! Nonexchangeable conformal risk control over barrier prediction errors.
//!
//! With loss `L_i(lambda) = max(0, e_i - lambda)` and geometric weights
//! `w_i = rho^(n + 1 - i)`, the weighted risk is
//!
//! ```text
//! r(lambda) = (sum_i w_i L_i(lambda) + B) / (n_w + 1),   n_w = sum_i w_i
//! ```
//!
//! `r` is convex, piecewise linear and non-increasing, so its sublevel set
//! `{r <= alpha}` is inverted exactly by scanning the sorted breakpoints.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fraction of samples above the loss bound tolerated before calibration fails.
pub const MAX_CLAMP_RATE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrcConfig<T> {
    /// Risk level.
    pub alpha: T,
    /// Miss level of the concentration bound.
    pub gamma: T,
    /// Total-variation allowance for nonexchangeability.
    pub beta: T,
    /// Geometric weight decay.
    pub rho: T,
    /// Upper bound `B` on the loss.
    pub loss_bound: T,
}

impl<T: Scalar> CrcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v < T::one();
        let msg = if !unit(self.alpha) {
            "crc.alpha must lie in (0, 1)"
        } else if !unit(self.gamma) {
            "crc.gamma must lie in (0, 1)"
        } else if !(self.beta >= T::zero()) {
            "crc.beta must be >= 0"
        } else if !unit(self.rho) {
            "crc.rho must lie in (0, 1)"
        } else if !(self.loss_bound > T::zero()) || !self.loss_bound.is_finite() {
            "crc.loss_bound must be > 0"
        } else if !(self.alpha + self.beta < T::one()) {
            "crc.alpha + crc.beta must be < 1"
        } else {
            return Ok(());
        };
        Err(Error::InvalidConfig(msg.into()))
    }
}

/// One calibration record: `|B - B_hat|` at timestep `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample<T> {
    pub error: T,
    pub k: usize,
}

#[inline]
pub fn crc_loss<T: Scalar>(error: T, lambda: T) -> T {
    (error - lambda).max(T::zero())
}

/// `w_i = rho^(n + 1 - i)` for `i = 1..=n` together with `n_w = sum w_i`.
pub fn geometric_weights<T: Scalar>(n: usize, rho: T) -> (Vec<T>, T) {
    let weights: Vec<T> = (1..=n).map(|i| rho.powi((n + 1 - i) as i32)).collect();
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    (weights, total)
}

/// Weighted empirical risk `r(lambda)`; `errors` are in weight order.
pub fn empirical_risk<T: Scalar>(errors: &[T], lambda: T, cfg: &CrcConfig<T>) -> T {
    let (w, n_w) = geometric_weights(errors.len(), cfg.rho);
    let s = errors
        .iter()
        .zip(&w)
        .fold(T::zero(), |acc, (&e, &wi)| acc + wi * crc_loss(e, lambda));
    (s + cfg.loss_bound) / (n_w + T::one())
}

/// Outcome of the margin inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate<T> {
    pub lambda: T,
    /// `false` when the irreducible term `B / (n_w + 1)` alone reaches `alpha`;
    /// `lambda` is then the loss bound.
    pub attainable: bool,
}

/// Smallest `lambda >= 0` with `r(lambda) <= alpha`. `errors` are in weight
/// order (ascending timestep).
pub fn optimal_lambda<T: Scalar>(errors: &[T], cfg: &CrcConfig<T>) -> Result<LambdaEstimate<T>> {
    if errors.is_empty() {
        return Err(Error::Empty("calibration samples"));
    }
    let (w, n_w) = geometric_weights(errors.len(), cfg.rho);
    let target = cfg.alpha * (n_w + T::one()) - cfg.loss_bound;
    if target <= T::zero() {
        return Ok(LambdaEstimate {
            lambda: cfg.loss_bound,
            attainable: false,
        });
    }
    let mut pairs: Vec<(T, T)> = errors.iter().copied().zip(w).collect();
    let total: T = pairs.iter().fold(T::zero(), |a, &(e, wi)| a + wi * e);
    if total <= target {
        return Ok(LambdaEstimate {
            lambda: T::zero(),
            attainable: true,
        });
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    // On [e_{j+1}, e_j] the weighted loss sum is P_j - W_j * lambda.
    let mut w_sum = T::zero();
    let mut p_sum = T::zero();
    for j in 0..pairs.len() {
        let (e, wi) = pairs[j];
        w_sum += wi;
        p_sum += wi * e;
        let next = pairs.get(j + 1).map_or(T::zero(), |p| p.0).max(T::zero());
        if next == e {
            continue;
        }
        if p_sum - w_sum * next >= target {
            let lambda = ((p_sum - target) / w_sum).max(next).min(e);
            return Ok(LambdaEstimate {
                lambda,
                attainable: true,
            });
        }
    }
    // Unreachable for consistent inputs: the sum at zero exceeds the target.
    Ok(LambdaEstimate {
        lambda: T::zero(),
        attainable: true,
    })
}

/// Convenience wrapper over samples already ordered by timestep.
pub fn optimal_lambda_for<T: Scalar>(samples: &[CalibrationSample<T>], cfg: &CrcConfig<T>) -> Result<LambdaEstimate<T>> {
    let errors: Vec<T> = samples.iter().map(|s| s.error).collect();
    optimal_lambda(&errors, cfg)
}

/// Concentration correction `(alpha + beta) / gamma`.
pub fn epsilon<T: Scalar>(cfg: &CrcConfig<T>) -> T {
    (cfg.alpha + cfg.beta) / cfg.gamma
}

/// Default loss bound: 1.5 times the 99.9th percentile (nearest rank) of the
/// errors, floored at a tiny positive value so `B > 0` always holds.
pub fn default_loss_bound<T: Scalar>(errors: &[T]) -> T {
    if errors.is_empty() {
        return T::lit(1e-12);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let rank = ((0.999 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    (sorted[rank - 1] * T::lit(1.5)).max(T::lit(1e-12))
}

/// Clamps errors into `[0, bound]`, returning how many exceeded the bound.
pub fn clamp_errors<T: Scalar>(errors: &mut [T], bound: T) -> usize {
    let mut clamped = 0;
    for e in errors.iter_mut() {
        if *e > bound {
            *e = bound;
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} calibration error(s) exceeded the loss bound {bound} and were clamped");
    }
    clamped
}

/// Fails when more than [`MAX_CLAMP_RATE`] of the samples needed clamping.
pub fn check_clamp_rate(clamped: usize, total: usize) -> Result<()> {
    let rate = if total == 0 { 0.0 } else { clamped as f64 / total as f64 };
    if rate > MAX_CLAMP_RATE {
        return Err(Error::ClampRateExceeded {
            clamped,
            total,
            rate,
            threshold: MAX_CLAMP_RATE,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, rho: f64, b: f64) -> CrcConfig<f64> {
        CrcConfig {
            alpha,
            gamma: 0.5,
            beta: 0.0,
            rho,
            loss_bound: b,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(crc_loss(0.0, 0.4), 0.0);
        assert!((crc_loss(0.7f64, 0.2) - 0.5).abs() < 1e-15);
        assert_eq!(crc_loss(0.3, 0.5), 0.0);
    }

    #[test]
    fn weight_examples() {
        let (w, n_w) = geometric_weights(3, 0.5);
        assert_eq!(w, vec![0.125, 0.25, 0.5]);
        assert_eq!(n_w, 0.875);
        let (w, _) = geometric_weights(1, 0.3);
        assert_eq!(w, vec![0.3]);
        let (w, _) = geometric_weights(5, 0.999);
        let (lo, hi) = (w[0], w[4]);
        assert!((hi - lo) / hi < 0.005);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn zero_errors_give_zero_margin() {
        let c = cfg(0.1, 0.99, 0.01);
        let est = optimal_lambda(&[0.0; 50], &c).unwrap();
        assert_eq!(est, LambdaEstimate { lambda: 0.0, attainable: true });
    }

    #[test]
    fn single_sample_floor_case() {
        // r(lambda) = (0.5 max(0, 1 - lambda) + 2) / 1.5 >= 2/1.5 > 0.9
        let c = cfg(0.9, 0.5, 2.0);
        let est = optimal_lambda(&[1.0], &c).unwrap();
        assert!(!est.attainable);
        assert_eq!(est.lambda, 2.0);
    }

    #[test]
    fn risk_at_margin_meets_alpha() {
        let errors: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 50.0).collect();
        let c = cfg(0.05, 0.999, 3.0);
        let est = optimal_lambda(&errors, &c).unwrap();
        assert!(est.attainable);
        let r = empirical_risk(&errors, est.lambda, &c);
        assert!(r <= c.alpha + 1e-12, "{r}");
        // Strictly smaller margins violate the level.
        assert!(empirical_risk(&errors, est.lambda - 1e-6, &c) > c.alpha);
    }

    #[test]
    fn risk_examples() {
        let errors = [0.5, 1.5, 0.25];
        let c = cfg(0.1, 0.5, 2.0);
        let (w, n_w) = geometric_weights(3, 0.5);
        assert!((empirical_risk(&errors, 2.0, &c) - 2.0 / (n_w + 1.0)).abs() < 1e-15);
        let mean: f64 = errors.iter().zip(&w).map(|(e, w)| e * w).sum();
        assert!((empirical_risk(&errors, 0.0, &c) - (mean + 2.0) / (n_w + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn epsilon_examples() {
        let mut c = cfg(0.01, 0.5, 1.0);
        c.gamma = 0.99;
        assert!((epsilon(&c) - 0.01 / 0.99).abs() < 1e-15);
        let c = CrcConfig { alpha: 0.1, gamma: 0.5, beta: 0.0, rho: 0.9, loss_bound: 1.0 };
        assert!((epsilon::<f64>(&c) - 0.2).abs() < 1e-15);
        let c = CrcConfig { alpha: 0.05, gamma: 0.5, beta: 0.05, rho: 0.9, loss_bound: 1.0 };
        assert!((epsilon::<f64>(&c) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn loss_bound_and_clamping() {
        let errors: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(default_loss_bound(&errors), 999.0 * 1.5);
        assert!(default_loss_bound(&[0.0, 0.0]) > 0.0);
        let mut e = vec![1.0, 5.0, 2.0];
        assert_eq!(clamp_errors(&mut e, 3.0), 1);
        assert_eq!(e, vec![1.0, 3.0, 2.0]);
        assert!(check_clamp_rate(5, 1000).is_ok());
        assert!(check_clamp_rate(6, 1000).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.01, 0.9, 1.0).validate().is_ok());
        assert!(cfg(1.0, 0.9, 1.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 1.0).validate().is_err());
        assert!(cfg(0.1, 0.9, 0.0).validate().is_err());
        let mut c = cfg(0.6, 0.9, 1.0);
        c.beta = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn works_in_f32() {
        let c = CrcConfig::<f32> { alpha: 0.1, gamma: 0.5, beta: 0.0, rho: 0.99, loss_bound: 1.0 };
        let errors: Vec<f32> = (0..100).map(|i| (i % 10) as f32 / 10.0).collect();
        let est = optimal_lambda(&errors, &c).unwrap();
        assert!(est.attainable);
        assert!(empirical_risk(&errors, est.lambda, &c) <= 0.1 + 1e-5);
    }
}
