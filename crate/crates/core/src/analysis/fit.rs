//! Least-squares Gaussian fit of the autofluorescence band.
//!
//! The fit runs Levenberg-Marquardt with Marquardt's diagonal scaling on the
//! parameters `(amplitude, center, fwhm)`, from a fixed start so results are
//! deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{PeakModel, Spectrum, FWHM_PER_SIGMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    /// Samples inside `[window_lo, window_hi]` enter the fit ...
    pub window_lo: f64,
    pub window_hi: f64,
    /// ... except those inside `[exclude_lo, exclude_hi]` (the PpIX band).
    pub exclude_lo: f64,
    pub exclude_hi: f64,
    pub initial_center: f64,
    pub initial_fwhm: f64,
    /// Wavelength where the background is read off (nm).
    pub evaluate_at: f64,
    /// Denominator wavelength of the spectral ratio (nm).
    pub autofluor_peak: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the relative change of the residual sum.
    pub tolerance: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            window_lo: 450.0,
            window_hi: 600.0,
            exclude_lo: 620.0,
            exclude_hi: 720.0,
            initial_center: 510.0,
            initial_fwhm: 118.0,
            evaluate_at: 635.0,
            autofluor_peak: 510.0,
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundFit {
    pub peak: PeakModel,
    /// Fitted autofluorescence evaluated at `evaluate_at`.
    pub i_background: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Fit data and model for one spectrum. Parameters are ordered
/// `[amplitude, center, fwhm]`.
#[derive(Debug, Clone)]
pub struct BackgroundProblem {
    lambdas: Vec<f64>,
    observed: Vec<f64>,
}

impl BackgroundProblem {
    pub fn new(s: &Spectrum, settings: &FitSettings) -> Result<Self> {
        let (lambdas, observed): (Vec<f64>, Vec<f64>) = s
            .grid()
            .wavelengths()
            .zip(s.values().iter().copied())
            .filter(|(l, _)| {
                *l >= settings.window_lo
                    && *l <= settings.window_hi
                    && !(*l >= settings.exclude_lo && *l <= settings.exclude_hi)
            })
            .unzip();
        if lambdas.len() < 3 {
            return Err(Error::Degenerate(format!(
                "only {} samples fall in the fit window [{}, {}]",
                lambdas.len(),
                settings.window_lo,
                settings.window_hi
            )));
        }
        Ok(BackgroundProblem { lambdas, observed })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn max_observed(&self) -> f64 {
        self.observed.iter().copied().fold(0.0, f64::max)
    }

    fn gaussian(theta: &[f64; 3], lambda: f64) -> f64 {
        let sigma = theta[2] / FWHM_PER_SIGMA;
        let z = (lambda - theta[1]) / sigma;
        theta[0] * (-0.5 * z * z).exp()
    }

    /// model - observed, per sample.
    pub fn residuals(&self, theta: &[f64; 3]) -> Vec<f64> {
        self.lambdas
            .iter()
            .zip(&self.observed)
            .map(|(l, y)| Self::gaussian(theta, *l) - y)
            .collect()
    }

    /// Analytic Jacobian of the residuals, one row per sample.
    pub fn jacobian(&self, theta: &[f64; 3]) -> Vec<[f64; 3]> {
        let [amp, center, fwhm] = *theta;
        let sigma = fwhm / FWHM_PER_SIGMA;
        self.lambdas
            .iter()
            .map(|l| {
                let d = l - center;
                let g = (-0.5 * d * d / (sigma * sigma)).exp();
                [
                    g,
                    amp * g * d / (sigma * sigma),
                    amp * g * d * d / (sigma * sigma * sigma) / FWHM_PER_SIGMA,
                ]
            })
            .collect()
    }

    /// Half the residual sum of squares.
    pub fn cost(&self, theta: &[f64; 3]) -> f64 {
        0.5 * self.residuals(theta).iter().map(|r| r * r).sum::<f64>()
    }

    /// Gradient of [`cost`](Self::cost), `J^T r`.
    pub fn gradient(&self, theta: &[f64; 3]) -> [f64; 3] {
        let r = self.residuals(theta);
        let j = self.jacobian(theta);
        let mut g = [0.0; 3];
        for (row, ri) in j.iter().zip(&r) {
            for k in 0..3 {
                g[k] += row[k] * ri;
            }
        }
        g
    }
}

/// Solves the 3x3 system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Fits a Gaussian to the autofluorescence band of `s` and evaluates it at
/// `settings.evaluate_at`.
pub fn fit_background(s: &Spectrum, settings: &FitSettings) -> Result<BackgroundFit> {
    let problem = BackgroundProblem::new(s, settings)?;
    let amp0 = problem.max_observed();
    if amp0 <= 0.0 {
        return Err(Error::Degenerate(
            "spectrum is zero throughout the fit window".into(),
        ));
    }
    let scale: f64 = problem.observed.iter().map(|y| y * y).sum();
    let mut theta = [amp0, settings.initial_center, settings.initial_fwhm];
    let mut cost = problem.cost(&theta);
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        if cost <= 1e-30 * scale {
            converged = true;
            break;
        }
        let r = problem.residuals(&theta);
        let j = problem.jacobian(&theta);
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (row, ri) in j.iter().zip(&r) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let mut lhs = jtj;
        for k in 0..3 {
            lhs[k][k] += damping * jtj[k][k].max(1e-300);
        }
        let step = solve3(lhs, [-jtr[0], -jtr[1], -jtr[2]]);
        let trial = step.map(|d| [theta[0] + d[0], theta[1] + d[1], theta[2] + d[2]]);
        match trial {
            Some(t) if t[0] >= 0.0 && t[2] > 0.0 && t.iter().all(|v| v.is_finite()) => {
                let trial_cost = problem.cost(&t);
                if trial_cost <= cost {
                    let change = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                    theta = t;
                    cost = trial_cost;
                    damping = (damping / 10.0).max(1e-12);
                    if change < settings.tolerance {
                        converged = true;
                        break;
                    }
                    continue;
                }
            }
            _ => {}
        }
        damping *= 10.0;
        if damping > 1e15 {
            // No descent direction left at working precision.
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    let peak = PeakModel {
        amplitude: theta[0],
        center: theta[1],
        fwhm: theta[2],
    };
    Ok(BackgroundFit {
        peak,
        i_background: peak.value(settings.evaluate_at).max(0.0),
        residual_norm: (2.0 * cost).sqrt(),
        iterations,
    })
}
