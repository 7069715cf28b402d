use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{DrmlError, Result};
use crate::linalg;
use crate::stats::expit;

const TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// Coefficient cap applied under (quasi-)complete separation.
const COEF_CAP: f64 = 30.0;

/// Logistic regression fitted by iteratively reweighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// `coef[0]` is the intercept.
    pub coef: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped because a coefficient reached the separation cap.
    pub capped: bool,
}

impl LogisticFit {
    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        features
            .rows()
            .into_iter()
            .map(|r| expit(self.coef[0] + r.dot(&self.coef.slice(ndarray::s![1..]))))
            .collect()
    }
}

pub fn fit(features: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<LogisticFit> {
    let design = linalg::with_intercept(features);
    let (n, k) = design.dim();
    let mut beta = Array1::<f64>::zeros(k);
    let ybar = target.mean().unwrap_or(0.5).clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (ybar / (1.0 - ybar)).ln();

    let mut weights = Array1::<f64>::zeros(n);
    let mut working = Array1::<f64>::zeros(n);
    for iter in 1..=MAX_ITER {
        for i in 0..n {
            let eta = design.row(i).dot(&beta);
            let p = expit(eta);
            let w = (p * (1.0 - p)).max(1e-10);
            weights[i] = w;
            working[i] = eta + (target[i] - p) / w;
        }
        let (xtwx, xtwz) = linalg::cross_products(design.view(), working.view(), Some(weights.view()));
        let solved = linalg::solve_spd(&xtwx, &xtwz)
            .ok_or_else(|| DrmlError::RankDeficient("IRLS weighted normal equations".into()))?;
        let mut next = solved.solution;
        let change = next
            .iter()
            .zip(beta.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if next.iter().any(|c| c.abs() > COEF_CAP || !c.is_finite()) {
            next.mapv_inplace(|c| if c.is_finite() { c.clamp(-COEF_CAP, COEF_CAP) } else { 0.0 });
            return Ok(LogisticFit {
                coef: next,
                iterations: iter,
                converged: false,
                capped: true,
            });
        }
        beta = next;
        if change < TOL {
            return Ok(LogisticFit {
                coef: beta,
                iterations: iter,
                converged: true,
                capped: false,
            });
        }
    }
    Ok(LogisticFit {
        coef: beta,
        iterations: MAX_ITER,
        converged: false,
        capped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coefficients_predict_one_half() {
        let f = LogisticFit {
            coef: Array1::zeros(3),
            iterations: 0,
            converged: true,
            capped: false,
        };
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i * j) as f64);
        assert!(f.predict(x.view()).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn score_equations_hold_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| {
            let p = expit(-0.3 + 1.2 * x[[i, 0]] - 0.7 * x[[i, 1]]);
            if rng.gen::<f64>() < p {
                1.0
            } else {
                0.0
            }
        });
        let f = fit(x.view(), y.view()).unwrap();
        assert!(f.converged);
        let p = f.predict(x.view());
        let design = linalg::with_intercept(x.view());
        for j in 0..3 {
            let score: f64 = (0..n).map(|i| design[[i, j]] * (y[i] - p[i])).sum();
            assert!(score.abs() < 1e-6, "score {j} = {score}");
        }
        assert!((f.coef[1] - 1.2).abs() < 0.3);
    }

    #[test]
    fn separation_caps_coefficients() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64 - 19.5);
        let y = x.column(0).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let f = fit(x.view(), y.view()).unwrap();
        assert!(f.capped);
        assert!(f.coef.iter().all(|c| c.abs() <= COEF_CAP));
        let p = f.predict(x.view());
        assert!(p[0] < 0.01 && p[39] > 0.99);
    }
}
