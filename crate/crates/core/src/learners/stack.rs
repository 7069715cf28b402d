use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{content_folds, fit as fit_learner, FittedLearner, StackParams};
use crate::error::Result;

const NNLS_TOL: f64 = 1e-10;
const NNLS_MAX_ITER: usize = 200_000;

/// Convex combination of member fits.
#[derive(Debug, Clone, PartialEq)]
pub struct StackFit {
    pub members: Vec<FittedLearner>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
}

impl StackFit {
    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; features.nrows()];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(m.predict_unchecked(features)) {
                *o += w * p;
            }
        }
        out
    }
}

pub fn fit(
    params: &StackParams,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    is_probability: bool,
) -> Result<StackFit> {
    let n = y.len();
    let m = params.members.len();
    let k = params.cv_folds.min(n).max(2);
    let folds = content_folds(x, y, k);

    let mut oof = Array2::<f64>::zeros((n, m));
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let xt = x.select(Axis(0), &train);
        let yt = y.select(Axis(0), &train);
        let xv = x.select(Axis(0), &test);
        for (j, spec) in params.members.iter().enumerate() {
            let fitted = fit_learner(spec, xt.view(), yt.view(), is_probability)?;
            for (&i, p) in test.iter().zip(fitted.predict_unchecked(xv.view())) {
                oof[[i, j]] = p;
            }
        }
    }

    let weights = convex_weights(oof.view(), y);
    let members = params
        .members
        .iter()
        .map(|spec| fit_learner(spec, x, y, is_probability))
        .collect::<Result<Vec<_>>>()?;
    Ok(StackFit { members, weights })
}

/// Non-negative least squares by projected gradient, then normalised onto
/// the simplex.
pub(crate) fn convex_weights(preds: ArrayView2<f64>, y: ArrayView1<f64>) -> Vec<f64> {
    let (n, m) = preds.dim();
    let scale = 1.0 / n as f64;
    let gram = preds.t().dot(&preds) * scale;
    let rhs = preds.t().dot(&y) * scale;

    // Step 1/L with L bounded by the Gram trace.
    let lipschitz = (0..m).map(|j| gram[[j, j]]).sum::<f64>();
    if !(lipschitz > 0.0) {
        return vec![1.0 / m as f64; m];
    }
    let step = 1.0 / lipschitz;
    let mut w = Array1::from_elem(m, 1.0 / m as f64);
    for _ in 0..NNLS_MAX_ITER {
        let grad = gram.dot(&w) - &rhs;
        let next = (&w - &(grad * step)).mapv(|v| v.max(0.0));
        let change = next
            .iter()
            .zip(w.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        w = next;
        if change < NNLS_TOL {
            break;
        }
    }
    let total: f64 = w.sum();
    if !(total > 0.0) {
        // every member anti-correlated with the target: fall back to the
        // single member with the smallest squared error
        let best = (0..m)
            .map(|j| {
                let col = preds.column(j);
                let err: f64 = col.iter().zip(y.iter()).map(|(p, t)| (p - t).powi(2)).sum();
                (j, err)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(j, _)| j);
        let mut out = vec![0.0; m];
        out[best] = 1.0;
        return out;
    }
    w.iter().map(|v| v / total).collect()
}
