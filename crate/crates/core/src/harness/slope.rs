use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares slope of `log err` on `log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Fits `log err = a + slope log x` by ordinary least squares. Needs at
/// least four points with positive `x` and `err`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<Slope> {
    if points.len() < 4 {
        return Err(Error::input(format!(
            "slope needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some((x, e)) = points
        .iter()
        .find(|(x, e)| !(*x > 0.0 && *e > 0.0 && x.is_finite() && e.is_finite()))
    {
        return Err(Error::input(format!(
            "log-log fit needs positive finite values, got ({x}, {e})"
        )));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("all x values are equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(Slope {
        slope,
        stderr,
        intercept,
    })
}
