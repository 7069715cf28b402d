use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{DrmlError, Result};
use crate::linalg;

/// Least-squares fit; `coef[0]` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: Array1<f64>,
    /// Whether the ridge fallback was needed.
    pub ridged: bool,
}

impl LinearFit {
    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        features
            .rows()
            .into_iter()
            .map(|r| self.coef[0] + r.dot(&self.coef.slice(ndarray::s![1..])))
            .collect()
    }
}

pub fn fit(features: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<LinearFit> {
    let design = linalg::with_intercept(features);
    let (xtx, xty) = linalg::cross_products(design.view(), target, None);
    let solved = linalg::solve_spd(&xtx, &xty)
        .ok_or_else(|| DrmlError::RankDeficient("least-squares normal equations".into()))?;
    Ok(LinearFit {
        coef: solved.solution,
        ridged: solved.ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn recovers_exact_line() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 10.0 - 2.0);
        let y = x.column(0).mapv(|v| 1.0 + 2.0 * v);
        let f = fit(x.view(), y.view()).unwrap();
        assert!((f.coef[0] - 1.0).abs() < 1e-10);
        assert!((f.coef[1] - 2.0).abs() < 1e-10);
        assert!(!f.ridged);
    }

    #[test]
    fn collinear_columns_use_ridge() {
        // second column duplicates the first
        let x = Array2::from_shape_fn((40, 2), |(i, _)| (i % 7) as f64);
        let y = x.column(0).mapv(|v| 3.0 - v);
        let f = fit(x.view(), y.view()).unwrap();
        assert!(f.ridged);
        let pred = f.predict(x.view());
        for (p, t) in pred.iter().zip(y.iter()) {
            assert!((p - t).abs() < 1e-4);
        }
    }

    #[test]
    fn intercept_only_without_features() {
        let x = Array2::<f64>::zeros((4, 0));
        let y = Array1::from(vec![1.0, 2.0, 3.0, 6.0]);
        let f = fit(x.view(), y.view()).unwrap();
        assert!((f.coef[0] - 3.0).abs() < 1e-12);
    }
}
