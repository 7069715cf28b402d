//! Marginal LATE estimators: cross-fitted one-step (DRML), two-stage least
//! squares, and the unadjusted Wald ratio.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::IvDataset;
use crate::error::{DrmlError, Result};
use crate::influence::{chi_if_point, compute_pseudo_outcomes, PseudoOutcomes};
use crate::linalg;
use crate::nuisance::{
    diagnostics, fit_nuisances, predict_out_of_fold, FoldPlan, NuisanceDiagnostics, NuisanceModel,
    NuisanceSpecs,
};
use crate::stats::{mean, mean_square, normal_quantile, variance};

/// Minimum `|Delta_hat|` accepted before declaring a weak instrument.
pub const WEAK_INSTRUMENT_FLOOR: f64 = 0.01;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateMethod {
    Drml,
    Tsls,
    Unadjusted,
}

impl LateMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            LateMethod::Drml => "drml",
            LateMethod::Tsls => "tsls",
            LateMethod::Unadjusted => "unadjusted",
        }
    }
}

/// One estimate with its Wald interval; serialises to a flat record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateResult {
    pub method: LateMethod,
    pub chi_hat: f64,
    /// `P_n gamma_dot` (drml) or the reduced-form contrast (unadjusted).
    pub gamma_hat: Option<f64>,
    /// `P_n delta_dot` (drml) or the first-stage contrast (unadjusted).
    pub delta_hat: Option<f64>,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub n: usize,
    pub epsilon: Option<f64>,
    pub folds: Option<usize>,
    pub pi_log_loss: Option<f64>,
    pub mu_r2: Option<f64>,
    pub lambda_log_loss: Option<f64>,
}

impl LateResult {
    fn new(method: LateMethod, chi_hat: f64, se: f64, alpha: f64, n: usize) -> Self {
        let q = normal_quantile(1.0 - alpha / 2.0);
        Self {
            method,
            chi_hat,
            gamma_hat: None,
            delta_hat: None,
            se,
            ci_lo: chi_hat - q * se,
            ci_hi: chi_hat + q * se,
            alpha,
            n,
            epsilon: None,
            folds: None,
            pi_log_loss: None,
            mu_r2: None,
            lambda_log_loss: None,
        }
    }

    fn with_diagnostics(mut self, d: &NuisanceDiagnostics) -> Self {
        self.pi_log_loss = Some(d.pi_log_loss);
        self.mu_r2 = Some(d.mu_r2);
        self.lambda_log_loss = Some(d.lambda_log_loss);
        self
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DrmlError::InvalidArgument(format!("alpha {alpha} must lie in (0, 1)")))
    }
}

fn check_arms(data: &IvDataset) -> Result<(usize, usize)> {
    let (n0, n1) = data.arm_counts();
    if n0 == 0 || n1 == 0 {
        return Err(DrmlError::InvalidArgument(
            "both instrument arms must be present".into(),
        ));
    }
    Ok((n0, n1))
}

/// Ratio estimate, influence-function standard error and Wald interval from
/// already computed pseudo-outcomes.
pub fn late_from_pseudo(pseudo: &PseudoOutcomes, alpha: f64, floor: f64) -> Result<LateResult> {
    check_alpha(alpha)?;
    let gamma = mean(&pseudo.gamma_dot);
    let delta = mean(&pseudo.delta_dot);
    if !(delta.abs() >= floor) {
        return Err(DrmlError::WeakInstrument { delta, floor });
    }
    let chi = gamma / delta;
    let ifs = pseudo
        .gamma_dot
        .iter()
        .zip(&pseudo.delta_dot)
        .map(|(g, d)| chi_if_point(*g, *d, chi, delta))
        .collect::<Result<Vec<_>>>()?;
    let n = pseudo.n();
    let se = (mean_square(&ifs) / n as f64).sqrt();
    let mut r = LateResult::new(LateMethod::Drml, chi, se, alpha, n);
    r.gamma_hat = Some(gamma);
    r.delta_hat = Some(delta);
    Ok(r)
}

/// Cross-fitted one-step estimate with nuisances from `model`.
pub fn estimate_late_with_model(
    data: &IvDataset,
    folds: &FoldPlan,
    model: &NuisanceModel,
    alpha: f64,
) -> Result<(LateResult, PseudoOutcomes)> {
    check_arms(data)?;
    let pred = predict_out_of_fold(model, data, folds)?;
    let pseudo = compute_pseudo_outcomes(data, &pred)?;
    let mut r = late_from_pseudo(&pseudo, alpha, WEAK_INSTRUMENT_FLOOR)?;
    r.epsilon = Some(model.epsilon);
    r.folds = Some(folds.k);
    r = r.with_diagnostics(&diagnostics(data, &pred));
    Ok((r, pseudo))
}

/// Cross-fitted DRML estimate of the LATE with a Wald interval.
pub fn estimate_late_drml(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
    alpha: f64,
) -> Result<LateResult> {
    estimate_late_drml_with_pseudo(data, folds, specs, epsilon, alpha).map(|(r, _)| r)
}

/// As [`estimate_late_drml`], also returning the out-of-fold pseudo-outcomes.
pub fn estimate_late_drml_with_pseudo(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
    alpha: f64,
) -> Result<(LateResult, PseudoOutcomes)> {
    check_alpha(alpha)?;
    if data.n() < 10 * folds.k {
        return Err(DrmlError::InvalidArgument(format!(
            "need at least {} rows for {} folds, got {}",
            10 * folds.k,
            folds.k,
            data.n()
        )));
    }
    check_arms(data)?;
    let model = fit_nuisances(data, folds, specs, epsilon)?;
    estimate_late_with_model(data, folds, &model, alpha)
}

/// Two-stage least squares with linear main effects for the covariates.
///
/// Standard error: `sigma² (X̂ᵀX̂)⁻¹` with `sigma²` from the structural
/// residuals `Y - [1, A, X] beta` on `n - p - 2` degrees of freedom.
pub fn estimate_late_tsls(data: &IvDataset, alpha: f64) -> Result<LateResult> {
    check_alpha(alpha)?;
    check_arms(data)?;
    let (n, p) = (data.n(), data.p());
    let k = p + 2;
    if n <= k {
        return Err(DrmlError::InvalidArgument(format!(
            "TSLS needs more than {k} rows, got {n}"
        )));
    }
    let build = |second: &[f64]| {
        let mut d = Array2::<f64>::ones((n, k));
        for i in 0..n {
            d[[i, 1]] = second[i];
            for j in 0..p {
                d[[i, j + 2]] = data.x[[i, j]];
            }
        }
        d
    };
    let first = build(&data.z);
    let a = Array1::from(data.a.clone());
    let (xtx, xty) = linalg::cross_products(first.view(), a.view(), None);
    let stage1 = linalg::solve_spd(&xtx, &xty)
        .ok_or_else(|| DrmlError::RankDeficient("TSLS first stage".into()))?;
    let a_hat = first.dot(&stage1.solution).to_vec();

    let second = build(&a_hat);
    let y = Array1::from(data.y.clone());
    let (xtx2, xty2) = linalg::cross_products(second.view(), y.view(), None);
    let stage2 = linalg::solve_spd(&xtx2, &xty2)
        .ok_or_else(|| DrmlError::RankDeficient("TSLS second stage".into()))?;
    let beta = &stage2.solution;

    let structural = build(&data.a);
    let resid = &y - &structural.dot(beta);
    let sigma2 = resid.iter().map(|e| e * e).sum::<f64>() / (n - k) as f64;
    let cov = stage2.inverse();
    let se = (sigma2 * cov[[1, 1]]).max(0.0).sqrt();
    Ok(LateResult::new(LateMethod::Tsls, beta[1], se, alpha, n))
}

/// Wald ratio of arm-mean contrasts with a delta-method standard error.
pub fn estimate_late_unadjusted(data: &IvDataset, alpha: f64) -> Result<LateResult> {
    check_alpha(alpha)?;
    let (n0, n1) = check_arms(data)?;
    let split = |v: &[f64], arm: f64| -> Vec<f64> {
        v.iter()
            .zip(&data.z)
            .filter(|(_, &z)| z == arm)
            .map(|(x, _)| *x)
            .collect()
    };
    let (y1, y0) = (split(&data.y, 1.0), split(&data.y, 0.0));
    let (a1, a0) = (split(&data.a, 1.0), split(&data.a, 0.0));
    let gamma = mean(&y1) - mean(&y0);
    let delta = mean(&a1) - mean(&a0);
    if delta == 0.0 {
        return Err(DrmlError::WeakInstrument { delta, floor: 0.0 });
    }
    let chi = gamma / delta;
    let resid = |ys: &[f64], as_: &[f64]| -> Vec<f64> {
        ys.iter().zip(as_).map(|(y, a)| y - chi * a).collect()
    };
    let var = (variance(&resid(&y1, &a1)) / n1 as f64 + variance(&resid(&y0, &a0)) / n0 as f64)
        / (delta * delta);
    let mut r = LateResult::new(LateMethod::Unadjusted, chi, var.sqrt(), alpha, data.n());
    r.gamma_hat = Some(gamma);
    r.delta_hat = Some(delta);
    Ok(r)
}
