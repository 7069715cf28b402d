//! Pointwise uncentered influence functions.
//!
//! With `pi(x, 1) = pi1` and `pi(x, 0) = 1 - pi1`:
//!
//! * `gamma_dot = (2z-1)/pi(x,z) * (y - mu(x,z)) + mu(x,1) - mu(x,0)`
//! * `delta_dot = (2z-1)/pi(x,z) * (a - lambda(x,z)) + lambda(x,1) - lambda(x,0)`
//! * `at_dot = (1-z)/(1-pi1) * (a - lambda(x,0)) + lambda(x,0)` (always-takers)
//! * `nt_dot = z/pi1 * (lambda(x,1) - a) + 1 - lambda(x,1)` (never-takers)
//!
//! Row by row, `delta_dot + at_dot + nt_dot = 1`.

use serde::{Deserialize, Serialize};

use crate::data::IvDataset;
use crate::error::{DrmlError, Result};
use crate::nuisance::NuisancePredictions;

fn check_pi(pi1: f64) -> Result<()> {
    if pi1 > 0.0 && pi1 < 1.0 {
        Ok(())
    } else {
        Err(DrmlError::PropensityOutOfRange(pi1))
    }
}

/// `pi(x, z)` from the stored `P(Z=1|X=x)`.
#[inline]
fn pi_at(z: f64, pi1: f64) -> f64 {
    z * pi1 + (1.0 - z) * (1.0 - pi1)
}

#[inline]
fn aipw(v: f64, z: f64, m0: f64, m1: f64, pi1: f64) -> f64 {
    let fitted = if z == 1.0 { m1 } else { m0 };
    (2.0 * z - 1.0) / pi_at(z, pi1) * (v - fitted) + (m1 - m0)
}

pub fn gamma_dot_point(y: f64, z: f64, mu0: f64, mu1: f64, pi1: f64) -> Result<f64> {
    check_pi(pi1)?;
    Ok(aipw(y, z, mu0, mu1, pi1))
}

pub fn delta_dot_point(a: f64, z: f64, lam0: f64, lam1: f64, pi1: f64) -> Result<f64> {
    check_pi(pi1)?;
    Ok(aipw(a, z, lam0, lam1, pi1))
}

/// `(at_dot, nt_dot)`: uncentered influence values of the always-taker
/// share `E[lambda(X,0)]` and never-taker share `E[1 - lambda(X,1)]`.
pub fn strata_dot_point(a: f64, z: f64, lam0: f64, lam1: f64, pi1: f64) -> Result<(f64, f64)> {
    check_pi(pi1)?;
    let at = (1.0 - z) / (1.0 - pi1) * (a - lam0) + lam0;
    let nt = z / pi1 * (lam1 - a) + (1.0 - lam1);
    Ok((at, nt))
}

/// Centered influence value of `chi = Gamma / Delta` at one observation:
/// `(gamma_dot - chi * delta_dot) / Delta`.
pub fn chi_if_point(gamma_dot: f64, delta_dot: f64, chi: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(DrmlError::InvalidArgument("Delta must be nonzero".into()));
    }
    Ok((gamma_dot - chi * delta_dot) / delta)
}

/// Per-observation pseudo-outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub gamma_dot: Vec<f64>,
    pub delta_dot: Vec<f64>,
    /// Always-taker values (`A(0) = A(1) = 1`).
    pub lambda0_dot: Vec<f64>,
    /// Never-taker values (`A(0) = A(1) = 0`).
    pub lambda1_dot: Vec<f64>,
    /// `mu(x,1) - mu(x,0)` per row.
    pub gamma_hat: Vec<f64>,
    /// `lambda(x,1) - lambda(x,0)` per row.
    pub delta_hat: Vec<f64>,
}

impl PseudoOutcomes {
    pub fn n(&self) -> usize {
        self.gamma_dot.len()
    }

    /// Rows in the given order (duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect();
        Self {
            gamma_dot: pick(&self.gamma_dot),
            delta_dot: pick(&self.delta_dot),
            lambda0_dot: pick(&self.lambda0_dot),
            lambda1_dot: pick(&self.lambda1_dot),
            gamma_hat: pick(&self.gamma_hat),
            delta_hat: pick(&self.delta_hat),
        }
    }
}

/// Evaluates the pointwise functions on every row.
pub fn compute_pseudo_outcomes(
    data: &IvDataset,
    nuisances: &NuisancePredictions,
) -> Result<PseudoOutcomes> {
    let n = data.n();
    if nuisances.n() != n {
        return Err(DrmlError::Dimension(format!(
            "{} nuisance rows for {n} observations",
            nuisances.n()
        )));
    }
    let mut out = PseudoOutcomes {
        gamma_dot: Vec::with_capacity(n),
        delta_dot: Vec::with_capacity(n),
        lambda0_dot: Vec::with_capacity(n),
        lambda1_dot: Vec::with_capacity(n),
        gamma_hat: Vec::with_capacity(n),
        delta_hat: Vec::with_capacity(n),
    };
    for i in 0..n {
        let v = nuisances.row(i);
        let (y, a, z) = (data.y[i], data.a[i], data.z[i]);
        out.gamma_dot.push(gamma_dot_point(y, z, v.mu0, v.mu1, v.pi1)?);
        out.delta_dot.push(delta_dot_point(a, z, v.lam0, v.lam1, v.pi1)?);
        let (at, nt) = strata_dot_point(a, z, v.lam0, v.lam1, v.pi1)?;
        out.lambda0_dot.push(at);
        out.lambda1_dot.push(nt);
        out.gamma_hat.push(v.mu1 - v.mu0);
        out.delta_hat.push(v.lam1 - v.lam0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;
    use proptest::prelude::*;

    #[test]
    fn gamma_dot_worked_examples() {
        let g = gamma_dot_point(1.0, 1.0, 0.4, 0.6, 0.5).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let g = gamma_dot_point(0.0, 0.0, 0.4, 0.6, 0.5).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        // zero residual leaves mu1 - mu0
        let g = gamma_dot_point(0.6, 1.0, 0.4, 0.6, 0.3).unwrap();
        assert!((g - 0.2).abs() < 1e-15);
        let g = gamma_dot_point(0.4, 0.0, 0.4, 0.6, 0.3).unwrap();
        assert!((g - 0.2).abs() < 1e-15);
    }

    #[test]
    fn delta_dot_worked_examples() {
        assert!((delta_dot_point(1.0, 1.0, 0.2, 0.8, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((delta_dot_point(0.0, 0.0, 0.2, 0.8, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((delta_dot_point(0.8, 1.0, 0.2, 0.8, 0.7).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn strata_dot_worked_examples() {
        let (at, nt) = strata_dot_point(0.0, 0.0, 0.2, 0.8, 0.5).unwrap();
        assert!((at + 0.2).abs() < 1e-15);
        assert!((nt - 0.2).abs() < 1e-15);
        let (at, _) = strata_dot_point(0.2, 0.0, 0.2, 0.8, 0.9).unwrap();
        assert!((at - 0.2).abs() < 1e-15);
    }

    #[test]
    fn chi_if_worked_examples() {
        assert!((chi_if_point(1.2, 1.0, 0.04, 0.5).unwrap() - 2.32).abs() < 1e-12);
        assert_eq!(chi_if_point(1.2, 1.0, 0.0, 0.5).unwrap(), 2.4);
        assert!(chi_if_point(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn propensity_must_be_interior() {
        assert!(gamma_dot_point(1.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(delta_dot_point(1.0, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(strata_dot_point(1.0, 1.0, 0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn self_consistency_of_plug_in_ratio() {
        let gd = [1.2, -0.3, 0.8, 2.0, 0.1];
        let dd = [0.9, 0.2, 0.4, 1.1, -0.2];
        let chi = mean(&gd) / mean(&dd);
        let delta = mean(&dd);
        let ifs: Vec<f64> = gd
            .iter()
            .zip(&dd)
            .map(|(g, d)| chi_if_point(*g, *d, chi, delta).unwrap())
            .collect();
        assert!(mean(&ifs).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn strata_values_partition_unity(
            a in 0u8..2, z in 0u8..2,
            lam0 in 0.0f64..1.0, lam1 in 0.0f64..1.0,
            pi1 in 0.01f64..0.99,
        ) {
            let (a, z) = (a as f64, z as f64);
            let d = delta_dot_point(a, z, lam0, lam1, pi1).unwrap();
            let (at, nt) = strata_dot_point(a, z, lam0, lam1, pi1).unwrap();
            prop_assert!((d + at + nt - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gamma_dot_is_linear_in_outcome(
            y in -5.0f64..5.0, z in 0u8..2, mu0 in -3.0f64..3.0, mu1 in -3.0f64..3.0,
            pi1 in 0.01f64..0.99, c in -4.0f64..4.0,
        ) {
            let z = z as f64;
            let g = gamma_dot_point(y, z, mu0, mu1, pi1).unwrap();
            let gc = gamma_dot_point(c * y, z, c * mu0, c * mu1, pi1).unwrap();
            prop_assert!((gc - c * g).abs() < 1e-9 * (1.0 + g.abs() * c.abs()));
        }
    }
}
