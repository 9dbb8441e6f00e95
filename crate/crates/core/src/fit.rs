//! Least-squares fits on log-log data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln y = intercept + slope ln x (+ log_coefficient ln ln x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Present when the fit included an `ln ln x` regressor.
    pub log_coefficient: Option<f64>,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

impl ScalingFit {
    /// Ordinary least squares of `ln y` on `ln x`.
    pub fn power_law(x: &[f64], y: &[f64]) -> Result<Self> {
        let (lx, ly) = logs(x, y)?;
        let (slope, intercept) = ols(&lx, &ly);
        let residual = rms(lx.iter().zip(&ly).map(|(a, b)| b - intercept - slope * a));
        Ok(Self {
            slope,
            intercept,
            log_coefficient: None,
            residual,
            points: lx.len(),
        })
    }

    /// Adds `ln ln x` as a second regressor; requires `x > e` and three points.
    pub fn power_law_with_log(x: &[f64], y: &[f64]) -> Result<Self> {
        let (lx, ly) = logs(x, y)?;
        if lx.len() < 3 || lx.iter().any(|v| *v <= 1.0) {
            return Err(Error::DegenerateData(
                "log-corrected fit needs three points with x > e".into(),
            ));
        }
        let llx: Vec<f64> = lx.iter().map(|v| v.ln()).collect();
        let m = nalgebra::DMatrix::from_fn(lx.len(), 3, |r, c| match c {
            0 => 1.0,
            1 => lx[r],
            _ => llx[r],
        });
        let rhs = nalgebra::DVector::from_column_slice(&ly);
        let coef = m
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::DegenerateData(e.to_string()))?;
        let fitted = &m * &coef;
        let residual = rms(ly.iter().zip(fitted.iter()).map(|(a, b)| a - b));
        Ok(Self {
            slope: coef[1],
            intercept: coef[0],
            log_coefficient: Some(coef[2]),
            residual,
            points: lx.len(),
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        let mut ln = self.intercept + self.slope * x.ln();
        if let Some(c) = self.log_coefficient {
            ln += c * x.ln().ln();
        }
        ln.exp()
    }
}

fn logs(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateData("fewer than two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateData("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    if lx.iter().all(|v| *v == lx[0]) {
        return Err(Error::DegenerateData("all abscissae equal".into()));
    }
    Ok((lx, y.iter().map(|v| v.ln()).collect()))
}

/// Returns `(slope, intercept)`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    (s / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let x = [4.0, 8.0, 16.0, 32.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        let f = ScalingFit::power_law(&x, &y).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert!((f.predict(64.0) - 3.0 * 64f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn log_corrected_fit() {
        let x = [8.0, 16.0, 32.0, 64.0, 128.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 2.0 * v.powi(-2) * v.ln().powi(2)).collect();
        let f = ScalingFit::power_law_with_log(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-9);
        assert!((f.log_coefficient.unwrap() - 2.0).abs() < 1e-9);
        let plain = ScalingFit::power_law(&x, &y).unwrap();
        assert!(plain.slope > -2.0 && plain.residual > 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(ScalingFit::power_law(&[1.0], &[1.0]).is_err());
        assert!(ScalingFit::power_law(&[1.0, 2.0], &[1.0, -1.0]).is_err());
        assert!(ScalingFit::power_law(&[2.0, 2.0], &[1.0, 3.0]).is_err());
        assert!(ScalingFit::power_law_with_log(&[4.0, 8.0], &[1.0, 2.0]).is_err());
    }
}
