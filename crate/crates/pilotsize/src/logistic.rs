//! Unpenalized logistic regression by damped Newton iteration.
//!
//! Used for the null model inside the lasso, the pooled score-slope fits in
//! the resampling engines, and the naive fits inside the EIV estimators.

use crate::error::{Error, Result};
use crate::linalg;

/// Coefficients of an unpenalized logistic fit. `coef[0]` is the intercept,
/// the rest follow the column order given to [`fit_logistic`].
#[derive(Debug, Clone)]
pub(crate) struct LogisticFit {
    pub coef: Vec<f64>,
    pub n_iter: usize,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn nll(eta: &[f64], y: &[u8]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - f64::from(yi) * e)
        .sum()
}

fn linear_predictor(cols: &[&[f64]], coef: &[f64], eta: &mut [f64]) {
    eta.fill(coef[0]);
    for (j, col) in cols.iter().enumerate() {
        let b = coef[j + 1];
        if b != 0.0 {
            for (e, &x) in eta.iter_mut().zip(col.iter()) {
                *e += b * x;
            }
        }
    }
}

/// True when the current fit classifies every sample strictly correctly.
/// That exhibits a separating hyperplane, and no finite logistic MLE can
/// have all margins strictly correct (scaling the coefficients up would
/// always improve the likelihood), so this is exact evidence of separation.
pub(crate) fn is_separated(eta: &[f64], y: &[u8]) -> bool {
    eta.iter()
        .zip(y)
        .all(|(&e, &yi)| (yi == 1 && e > 0.0) || (yi == 0 && e < 0.0))
}

/// Fits `y ~ intercept + cols` by Newton iteration with step halving.
///
/// Errors with [`Error::SeparableData`] when the classes are separable (the
/// MLE does not exist) and with [`Error::NonConvergence`] when the gradient
/// norm is still above tolerance after `max_iter` steps.
pub(crate) fn fit_logistic(cols: &[&[f64]], y: &[u8]) -> Result<LogisticFit> {
    fit_logistic_from(cols, y, None)
}

pub(crate) fn fit_logistic_from(
    cols: &[&[f64]],
    y: &[u8],
    start: Option<&[f64]>,
) -> Result<LogisticFit> {
    let n = y.len();
    let k = cols.len() + 1;
    if n == 0 {
        return Err(Error::InvalidData("empty dataset in logistic fit".into()));
    }
    for col in cols {
        if col.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "column of length {} for {n} samples",
                col.len()
            )));
        }
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::InvalidData(
            "both classes required for logistic fit".into(),
        ));
    }

    let mut coef = match start {
        Some(c) => c.to_vec(),
        None => {
            let mut c = vec![0.0; k];
            let ybar = ones as f64 / n as f64;
            c[0] = (ybar / (1.0 - ybar)).ln();
            c
        }
    };
    let mut eta = vec![0.0; n];
    linear_predictor(cols, &coef, &mut eta);
    let mut obj = nll(&eta, y);

    const GRAD_TOL: f64 = 1e-10;
    const MAX_ITER: usize = 100;

    for iter in 0..MAX_ITER {
        // Gradient of the NLL is X'(pi - y); Hessian is X'WX.
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let resid = pi - f64::from(y[i]);
            let w = (pi * (1.0 - pi)).max(1e-10);
            let mut xi = [0.0; 16];
            debug_assert!(k <= 16);
            xi[0] = 1.0;
            for (j, col) in cols.iter().enumerate() {
                xi[j + 1] = col[i];
            }
            for a in 0..k {
                grad[a] += xi[a] * resid;
                for b in a..k {
                    hess[a * k + b] += w * xi[a] * xi[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[a * k + b] = hess[b * k + a];
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < GRAD_TOL {
            return Ok(LogisticFit { coef, n_iter: iter });
        }

        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = match linalg::solve(hess.clone(), rhs) {
            Ok(s) => s,
            Err(_) => {
                // Ridge the Hessian slightly and retry once.
                let mut ridged = hess;
                for a in 0..k {
                    ridged[a * k + a] += 1e-8;
                }
                linalg::solve(ridged, grad.iter().map(|g| -g).collect())?
            }
        };

        // Near the optimum the true decrease drops below the rounding floor
        // of the summed NLL; the slack keeps full Newton steps acceptable
        // there so convergence stays quadratic.
        let slack = 1e-12 * (1.0 + obj.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef
                .iter()
                .zip(&step)
                .map(|(c, s)| c + scale * s)
                .collect();
            linear_predictor(cols, &trial, &mut eta);
            let trial_obj = nll(&eta, y);
            if trial_obj <= obj + slack {
                coef = trial;
                obj = trial_obj.min(obj);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            linear_predictor(cols, &coef, &mut eta);
            // No descent direction left; either we are at the optimum or the
            // likelihood is flat along a separating direction.
            if is_separated(&eta, y) {
                return Err(Error::SeparableData);
            }
            return Ok(LogisticFit { coef, n_iter: iter });
        }
        if is_separated(&eta, y) {
            return Err(Error::SeparableData);
        }
    }
    linear_predictor(cols, &coef, &mut eta);
    if is_separated(&eta, y) {
        return Err(Error::SeparableData);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        context: "logistic Newton".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_matches_logit_of_mean() {
        let y = vec![1, 1, 1, 0];
        let fit = fit_logistic(&[], &y).unwrap();
        assert!((fit.coef[0] - (3.0f64 / 1.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn recovers_slope_on_noiseless_logit_fractions() {
        // y values drawn deterministically to match pi closely at n large:
        // use a dense grid with both labels at each x according to rounded
        // frequencies; slope should be near truth.
        let mut x = Vec::new();
        let mut y = Vec::new();
        let beta = 1.5;
        for i in 0..2000 {
            let xi = -2.0 + 4.0 * (i as f64) / 1999.0;
            let pi = sigmoid(beta * xi);
            x.push(xi);
            // deterministic thresholding against a low-discrepancy sequence
            let u = ((i as f64) * 0.754877666).fract();
            y.push(u8::from(u < pi));
        }
        let fit = fit_logistic(&[&x], &y).unwrap();
        assert!((fit.coef[1] - beta).abs() < 0.2, "slope {}", fit.coef[1]);
    }

    #[test]
    fn detects_separation() {
        let x = vec![-2.0, -1.5, -1.0, 1.0, 1.5, 2.0];
        let y = vec![0, 0, 0, 1, 1, 1];
        match fit_logistic(&[&x], &y) {
            Err(Error::SeparableData) => {}
            other => panic!("expected separation, got {other:?}"),
        }
    }
}
