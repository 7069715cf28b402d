//! Sensitivity of the LATE to defiers: `xi(d1, d2) = chi + d1 d2 / Delta`,
//! where `d1` is the defier share and `d2` the defier-minus-complier effect.

use serde::{Deserialize, Serialize};

use crate::error::{DrmlError, Result};

pub const DEFAULT_DELTA1_POINTS: usize = 101;
pub const DEFAULT_DELTA2_POINTS: usize = 161;
pub const DELTA1_RANGE: (f64, f64) = (0.0, 1.0);
pub const DELTA2_RANGE: (f64, f64) = (-2.0, 2.0);

pub fn xi(chi_hat: f64, delta_hat: f64, delta1: f64, delta2: f64) -> Result<f64> {
    if delta_hat == 0.0 {
        return Err(DrmlError::InvalidArgument("Delta_hat must be nonzero".into()));
    }
    if !(0.0..=1.0).contains(&delta1) {
        return Err(DrmlError::InvalidArgument(format!("delta1 {delta1} outside [0, 1]")));
    }
    Ok(chi_hat + delta1 * delta2 / delta_hat)
}

/// `delta2` at which `xi` crosses zero for a given `delta1 > 0`.
pub fn frontier_delta2(chi_hat: f64, delta_hat: f64, delta1: f64) -> f64 {
    -chi_hat * delta_hat / delta1
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => vec![],
        1 => vec![lo],
        _ => (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySurface {
    pub chi_hat: f64,
    pub delta_hat: f64,
    pub delta1_grid: Vec<f64>,
    pub delta2_grid: Vec<f64>,
    /// `xi[i][j]` at `(delta1_grid[i], delta2_grid[j])`.
    pub xi: Vec<Vec<f64>>,
    /// `(delta1, delta2*)` for every grid `delta1 > 0` whose zero crossing
    /// lies inside the `delta2` range.
    pub frontier: Vec<(f64, f64)>,
    /// `chi_hat == 0`: `xi` vanishes on both axes instead of on a curve.
    pub frontier_is_axes: bool,
}

impl SensitivitySurface {
    /// Long form: delta1, delta2, xi.
    pub fn to_csv_body(&self) -> String {
        let mut out = String::from("delta1,delta2,xi\n");
        for (i, d1) in self.delta1_grid.iter().enumerate() {
            for (j, d2) in self.delta2_grid.iter().enumerate() {
                out.push_str(&format!("{d1},{d2},{}\n", self.xi[i][j]));
            }
        }
        out
    }

    pub fn frontier_csv_body(&self) -> String {
        let mut out = String::from("delta1,delta2\n");
        for (d1, d2) in &self.frontier {
            out.push_str(&format!("{d1},{d2}\n"));
        }
        out
    }
}

pub fn sensitivity_surface(
    chi_hat: f64,
    delta_hat: f64,
    delta1_points: usize,
    delta2_points: usize,
) -> Result<SensitivitySurface> {
    if delta_hat == 0.0 {
        return Err(DrmlError::InvalidArgument("Delta_hat must be nonzero".into()));
    }
    let d1 = linspace(DELTA1_RANGE.0, DELTA1_RANGE.1, delta1_points);
    let d2 = linspace(DELTA2_RANGE.0, DELTA2_RANGE.1, delta2_points);
    let xi_rows = d1
        .iter()
        .map(|&a| d2.iter().map(|&b| xi(chi_hat, delta_hat, a, b)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let frontier = if chi_hat == 0.0 {
        Vec::new()
    } else {
        d1.iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| (a, frontier_delta2(chi_hat, delta_hat, a)))
            .filter(|&(_, b)| (DELTA2_RANGE.0..=DELTA2_RANGE.1).contains(&b))
            .collect()
    };
    Ok(SensitivitySurface {
        chi_hat,
        delta_hat,
        delta1_grid: d1,
        delta2_grid: d2,
        xi: xi_rows,
        frontier,
        frontier_is_axes: chi_hat == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_case_is_exactly_zero() {
        assert_eq!(xi(-0.04, 0.5, 0.25, 0.08).unwrap(), 0.0);
        assert!((frontier_delta2(-0.04, 0.5, 0.1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn reductions() {
        for d2 in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(xi(0.3, -0.2, 0.0, d2).unwrap(), 0.3);
        }
        for d1 in [0.0, 0.4, 1.0] {
            assert_eq!(xi(0.3, -0.2, d1, 0.0).unwrap(), 0.3);
        }
        assert!(xi(0.3, 0.0, 0.1, 0.1).is_err());
        assert!(xi(0.3, 0.5, 1.1, 0.1).is_err());
    }

    #[test]
    fn surface_shape_and_frontier() {
        let s = sensitivity_surface(-0.04, 0.5, DEFAULT_DELTA1_POINTS, DEFAULT_DELTA2_POINTS).unwrap();
        assert_eq!(s.xi.len(), 101);
        assert!(s.xi.iter().all(|r| r.len() == 161));
        assert_eq!(s.to_csv_body().lines().count(), 101 * 161 + 1);
        assert_eq!(s.delta2_grid[80], 0.0);
        assert!(!s.frontier.is_empty());
        for &(a, b) in &s.frontier {
            assert!(xi(s.chi_hat, s.delta_hat, a, b).unwrap().abs() < 1e-12);
            assert!((a * b + s.chi_hat * s.delta_hat).abs() < 1e-12);
        }
        // |delta2*| shrinks as delta1 grows
        assert!(s.frontier.windows(2).all(|w| w[1].1.abs() < w[0].1.abs()));
    }

    #[test]
    fn null_effect_frontier_is_axes() {
        let s = sensitivity_surface(0.0, 0.4, 11, 9).unwrap();
        assert!(s.frontier_is_axes && s.frontier.is_empty());
        for (i, a) in s.delta1_grid.iter().enumerate() {
            for (j, b) in s.delta2_grid.iter().enumerate() {
                assert_eq!(s.xi[i][j].signum() * (a * b != 0.0) as u8 as f64, (a * b / 0.4).signum() * (a * b != 0.0) as u8 as f64);
            }
        }
    }

    proptest! {
        #[test]
        fn bilinear_in_delta1(
            chi in -3.0f64..3.0, d in 0.05f64..1.0, d1 in 0.0f64..0.5, d2 in -2.0f64..2.0, c in 0.0f64..2.0,
        ) {
            let base = xi(chi, d, d1, d2).unwrap() - chi;
            let scaled = xi(chi, d, c * d1, d2).unwrap() - chi;
            prop_assert!((scaled - c * base).abs() < 1e-10);
        }
    }
}
