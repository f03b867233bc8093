//! Log-log least-squares rate fits.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest `|log e − (slope·log x + intercept)|` over fitted points.
    pub max_log_residual: f64,
    pub points_used: usize,
    /// Pairs with `e = 0`, excluded from the fit and reported as exact.
    pub exact_points: usize,
    /// Intercept `b` of the linear fit `e ≈ a·x + b` (clamped at 0).
    pub floor_estimate: f64,
    /// Set when the smallest error is within a factor 10 of the floor.
    pub floor_warning: bool,
}

/// Least squares for `y ≈ slope·x + intercept`.
pub fn linear_least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Fit `log e = slope·log x + intercept` over `(x, e)` pairs.
///
/// `solver_tol` sets the noise level: if every error is below ten times it
/// the fit is refused as degenerate.
pub fn rate_fit(pairs: &[(f64, f64)], solver_tol: f64) -> Result<RateFit> {
    if pairs.iter().any(|&(x, e)| !(x > 0.0) || !(e >= 0.0)) {
        return Err(Error::DegenerateFit("abscissae must be positive and errors nonnegative".into()));
    }
    let exact_points = pairs.iter().filter(|p| p.1 == 0.0).count();
    let used: Vec<(f64, f64)> = pairs.iter().copied().filter(|p| p.1 > 0.0).collect();
    if used.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 positive errors, got {} ({} exact)",
            used.len(),
            exact_points
        )));
    }
    if used.iter().all(|p| p.1 < 10.0 * solver_tol) {
        return Err(Error::DegenerateFit(format!(
            "all errors below 10 x solver tolerance {solver_tol:.1e}"
        )));
    }
    let lx: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_least_squares(&lx, &ly);
    let max_log_residual = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);

    let xs: Vec<f64> = used.iter().map(|p| p.0).collect();
    let es: Vec<f64> = used.iter().map(|p| p.1).collect();
    let floor_estimate = linear_least_squares(&xs, &es).1.max(0.0);
    let min_e = es.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateFit {
        slope,
        intercept,
        max_log_residual,
        points_used: used.len(),
        exact_points,
        floor_estimate,
        floor_warning: floor_estimate > 0.0 && min_e < 10.0 * floor_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(n: usize, from: f64, ratio: f64) -> Vec<f64> {
        (0..n).map(|k| from * ratio.powi(k as i32)).collect()
    }

    #[test]
    fn exact_power_laws() {
        let ls = geometric(6, 0.1, 0.5);
        let lin: Vec<_> = ls.iter().map(|&l| (l, 3.0 * l)).collect();
        let f = rate_fit(&lin, 1e-12).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(f.max_log_residual < 1e-12);
        assert!(!f.floor_warning);
        let quad: Vec<_> = ls.iter().map(|&l| (l, l * l)).collect();
        assert!((rate_fit(&quad, 1e-12).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn floor_is_detected() {
        let ls = geometric(8, 1e-6, 0.25);
        let pairs: Vec<_> = ls.iter().map(|&l| (l, 3.0 * l + 1e-9)).collect();
        let f = rate_fit(&pairs, 1e-14).unwrap();
        assert!(f.slope < 1.0);
        assert!(f.floor_warning);
        assert!((f.floor_estimate - 1e-9).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(rate_fit(&[(0.1, 1.0), (0.05, 0.5)], 1e-12).is_err());
        assert!(rate_fit(&[(0.1, 1e-13), (0.05, 1e-13), (0.02, 1e-13)], 1e-12).is_err());
        let f = rate_fit(&[(0.1, 0.0), (0.1, 0.2), (0.05, 0.1), (0.02, 0.04)], 1e-12).unwrap();
        assert_eq!(f.exact_points, 1);
        assert_eq!(f.points_used, 3);
    }
}
