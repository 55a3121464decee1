//! Ordinary least squares with t-test p-values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided p-value below which a coefficient is starred.
pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsCoefficient {
    pub name: String,
    pub coef: f64,
    pub std_err: f64,
    pub t: f64,
    pub p_value: f64,
}

impl OlsCoefficient {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// One entry per predictor, then the intercept last.
    pub coefficients: Vec<OlsCoefficient>,
    pub residuals: Vec<f64>,
    pub dof: usize,
    pub r_squared: f64,
}

impl OlsFit {
    pub fn intercept(&self) -> &OlsCoefficient {
        self.coefficients.last().expect("intercept present")
    }

    /// Plain-text table with `Coef.` and `p-value` columns.
    pub fn table(&self) -> String {
        let width = self
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "", "Coef.", "p-value");
        for c in &self.coefficients {
            let star = if c.significant() { "*" } else { "" };
            out.push_str(&format!(
                "{:<width$}  {:>10}  {:>8.3}\n",
                c.name,
                format!("{:.3}{star}", c.coef),
                c.p_value
            ));
        }
        out
    }
}

/// Regresses `y` on the rows of `x` with an intercept column appended.
/// `names` labels the predictor columns.
pub fn ols_regress(y: &[f64], x: &[Vec<f64>], names: &[&str]) -> Result<OlsFit> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: x.len(),
        });
    }
    let p = names.len();
    if let Some(bad) = x.iter().find(|r| r.len() != p) {
        return Err(Error::LengthMismatch {
            left: p,
            right: bad.len(),
        });
    }
    if n < p + 2 {
        return Err(Error::NotEnoughRows {
            rows: n,
            needed: p + 2,
        });
    }
    let k = p + 1;
    let design = DMatrix::from_fn(n, k, |i, j| if j < p { x[i][j] } else { 1.0 });
    let singular = design.clone().svd(false, false).singular_values;
    let max_sv = singular.max();
    if !(max_sv > 0.0) || singular.min() <= max_sv * 1e-10 {
        return Err(Error::RankDeficient);
    }
    let xtx = design.transpose() * &design;
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let yv = DVector::from_column_slice(y);
    let beta = chol.solve(&(design.transpose() * &yv));
    let resid = &yv - &design * &beta;
    let dof = n - k;
    let rss = resid.norm_squared();
    let sigma2 = rss / dof as f64;
    let inv = chol.inverse();
    let t_dist =
        StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let coefficients = (0..k)
        .map(|j| {
            let coef = beta[j];
            let std_err = (sigma2 * inv[(j, j)]).max(0.0).sqrt();
            let (t, p_value) = if std_err > 0.0 {
                let t = coef / std_err;
                (t, 2.0 * (1.0 - t_dist.cdf(t.abs())))
            } else if coef == 0.0 {
                (0.0, 1.0)
            } else {
                (coef.signum() * f64::INFINITY, 0.0)
            };
            OlsCoefficient {
                name: names.get(j).map_or("intercept", |s| s).to_string(),
                coef,
                std_err,
                t,
                p_value,
            }
        })
        .collect();
    Ok(OlsFit {
        coefficients,
        residuals: resid.iter().copied().collect(),
        dof,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}
