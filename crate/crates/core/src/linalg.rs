//! Dense normal-equation solves for the small designs used by the linear
//! learners and TSLS.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Ridge added to the normal equations when the plain Cholesky fails.
pub const RIDGE: f64 = 1e-8;

/// In-place Cholesky factorisation of a symmetric matrix. Returns `None`
/// when a pivot is not safely positive.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let k = a.nrows();
    let scale = (0..k).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max).max(1.0);
    let mut l = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut d = a[[j, j]];
        for m in 0..j {
            d -= l[[j, m]] * l[[j, m]];
        }
        if !(d > 1e-13 * scale) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..k {
            let mut s = a[[i, j]];
            for m in 0..j {
                s -= l[[i, m]] * l[[j, m]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let k = l.nrows();
    let mut y = Array1::<f64>::zeros(k);
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= l[[i, m]] * y[m];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(k);
    for i in (0..k).rev() {
        let mut s = y[i];
        for m in (i + 1)..k {
            s -= l[[m, i]] * x[m];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Outcome of a symmetric positive (semi-)definite solve.
#[derive(Debug, Clone)]
pub struct Solved {
    pub solution: Array1<f64>,
    pub ridged: bool,
    /// Cholesky factor of the (possibly ridged) system, reused for inverses.
    factor: Array2<f64>,
}

impl Solved {
    /// Inverse of the solved system matrix.
    pub fn inverse(&self) -> Array2<f64> {
        let k = self.factor.nrows();
        let mut inv = Array2::<f64>::zeros((k, k));
        for j in 0..k {
            let mut e = Array1::<f64>::zeros(k);
            e[j] = 1.0;
            let col = cholesky_solve(&self.factor, &e);
            inv.column_mut(j).assign(&col);
        }
        inv
    }
}

/// Solves `A x = b` for symmetric `A`, retrying with `A + RIDGE·I` when the
/// factorisation breaks down. `None` if even the ridged system is singular.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<Solved> {
    if let Some(l) = cholesky(a) {
        return Some(Solved {
            solution: cholesky_solve(&l, b),
            ridged: false,
            factor: l,
        });
    }
    let mut ridged = a.clone();
    for i in 0..ridged.nrows() {
        ridged[[i, i]] += RIDGE;
    }
    let l = cholesky_ridged(&ridged)?;
    Some(Solved {
        solution: cholesky_solve(&l, b),
        ridged: true,
        factor: l,
    })
}

// The ridged system only needs strict positivity, not the relative pivot
// guard used on the first attempt.
fn cholesky_ridged(a: &Array2<f64>) -> Option<Array2<f64>> {
    let k = a.nrows();
    let mut l = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut d = a[[j, j]];
        for m in 0..j {
            d -= l[[j, m]] * l[[j, m]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..k {
            let mut s = a[[i, j]];
            for m in 0..j {
                s -= l[[i, m]] * l[[j, m]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Builds `[1 | features]`.
pub fn with_intercept(features: ArrayView2<f64>) -> Array2<f64> {
    let (n, p) = features.dim();
    let mut d = Array2::<f64>::ones((n, p + 1));
    d.slice_mut(ndarray::s![.., 1..]).assign(&features);
    d
}

/// Weighted cross products `(DᵀWD, DᵀWy)`; unit weights when `w` is `None`.
pub fn cross_products(
    design: ArrayView2<f64>,
    target: ArrayView1<f64>,
    w: Option<ArrayView1<f64>>,
) -> (Array2<f64>, Array1<f64>) {
    let (n, k) = design.dim();
    let mut xtx = Array2::<f64>::zeros((k, k));
    let mut xty = Array1::<f64>::zeros(k);
    for i in 0..n {
        let wi = w.map_or(1.0, |w| w[i]);
        let row = design.row(i);
        for a in 0..k {
            let ra = row[a] * wi;
            xty[a] += ra * target[i];
            for b in 0..=a {
                xtx[[a, b]] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[[b, a]] = xtx[[a, b]];
        }
    }
    (xtx, xty)
}
