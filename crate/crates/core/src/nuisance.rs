//! Cross-fitting: stratified fold construction and out-of-fold estimation of
//! the instrument propensity `pi(x) = P(Z=1|X=x)`, the outcome regression
//! `mu(x, z) = E[Y|X=x, Z=z]` and the treatment regression
//! `lambda(x, z) = E[A|X=x, Z=z]`.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::IvDataset;
use crate::error::{DrmlError, Result};
use crate::learners::{fit, FittedLearner, LearnerSpec};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Fold index per row, stratified by instrument arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn rows_outside(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

/// Seeded, Z-stratified assignment of `n` rows to `k` near-equal folds.
pub fn make_folds(n: usize, k: usize, z: &[f64], seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(DrmlError::InvalidArgument("fold count k must be >= 2".into()));
    }
    if z.len() != n {
        return Err(DrmlError::Dimension(format!("n = {n} but z has {} rows", z.len())));
    }
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &v) in z.iter().enumerate() {
        arms[(v == 1.0) as usize].push(i);
    }
    for (arm, rows) in arms.iter().enumerate() {
        if rows.len() < k {
            return Err(DrmlError::InvalidArgument(format!(
                "k = {k} exceeds the {} rows with Z = {arm}",
                rows.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; n];
    // The second arm continues the round-robin where the first stopped so
    // total fold sizes stay within one of each other.
    let mut offset = 0;
    for rows in arms.iter_mut() {
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            assignment[i] = (offset + pos) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(FoldPlan {
        k,
        assignment,
        seed,
    })
}

/// Learner choices for the three nuisance regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    pub pi: LearnerSpec,
    pub mu: LearnerSpec,
    pub lambda: LearnerSpec,
}

impl NuisanceSpecs {
    pub fn uniform(spec: LearnerSpec) -> Self {
        Self {
            pi: spec.clone(),
            mu: spec.clone(),
            lambda: spec,
        }
    }

    /// Main-effects logistic / linear models.
    pub fn parametric() -> Self {
        Self::uniform(LearnerSpec::Glm)
    }

    pub fn ensemble() -> Self {
        Self::uniform(LearnerSpec::ensemble())
    }
}

/// Nuisance values at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceValues {
    pub pi1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub lam0: f64,
    pub lam1: f64,
}

pub type OracleFn = dyn Fn(ArrayView1<f64>) -> NuisanceValues + Send + Sync;

/// The five regressions fitted without one fold's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub pi: FittedLearner,
    pub mu0: FittedLearner,
    pub mu1: FittedLearner,
    pub lam0: FittedLearner,
    pub lam1: FittedLearner,
}

#[derive(Clone)]
pub enum NuisanceSource {
    /// One fit per fold, trained on the complement of that fold.
    Fitted(Vec<FoldFit>),
    /// Known closed-form nuisances, used by simulation checks.
    Oracle(Arc<OracleFn>),
}

impl fmt::Debug for NuisanceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuisanceSource::Fitted(folds) => f.debug_tuple("Fitted").field(&folds.len()).finish(),
            NuisanceSource::Oracle(_) => f.write_str("Oracle"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceModel {
    pub source: NuisanceSource,
    /// Propensity truncation level.
    pub epsilon: f64,
    /// Clip outcome predictions to [0, 1].
    pub binary_outcome: bool,
    pub specs: Option<NuisanceSpecs>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(DrmlError::InvalidArgument(format!(
            "epsilon {epsilon} must lie in [0, 0.5)"
        )));
    }
    Ok(())
}

impl NuisanceModel {
    /// Wraps user-supplied nuisance functions, bypassing fitting.
    pub fn oracle<F>(epsilon: f64, binary_outcome: bool, f: F) -> Result<Self>
    where
        F: Fn(ArrayView1<f64>) -> NuisanceValues + Send + Sync + 'static,
    {
        check_epsilon(epsilon)?;
        Ok(Self {
            source: NuisanceSource::Oracle(Arc::new(f)),
            epsilon,
            binary_outcome,
            specs: None,
        })
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.source, NuisanceSource::Oracle(_))
    }

    /// True if any fitted regression ended on an iteration cap.
    pub fn any_warning(&self) -> bool {
        match &self.source {
            NuisanceSource::Fitted(folds) => folds.iter().any(|f| {
                [&f.pi, &f.mu0, &f.mu1, &f.lam0, &f.lam1]
                    .iter()
                    .any(|l| l.warning())
            }),
            NuisanceSource::Oracle(_) => false,
        }
    }
}

/// Fits every fold's nuisances on the rows outside that fold. `mu` and
/// `lambda` are fitted separately within each instrument arm.
pub fn fit_nuisances(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
) -> Result<NuisanceModel> {
    check_epsilon(epsilon)?;
    if folds.n() != data.n() {
        return Err(DrmlError::Dimension(format!(
            "fold plan covers {} rows, dataset has {}",
            folds.n(),
            data.n()
        )));
    }
    let binary_outcome = data.y_is_binary();
    let fits = (0..folds.k)
        .into_par_iter()
        .map(|f| fit_fold(data, &folds.rows_outside(f), specs, binary_outcome))
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceModel {
        source: NuisanceSource::Fitted(fits),
        epsilon,
        binary_outcome,
        specs: Some(specs.clone()),
    })
}

fn fit_fold(
    data: &IvDataset,
    train: &[usize],
    specs: &NuisanceSpecs,
    binary_outcome: bool,
) -> Result<FoldFit> {
    let x = data.x.select(Axis(0), train);
    let z = Array1::from_iter(train.iter().map(|&i| data.z[i]));
    let pi = fit(&specs.pi, x.view(), z.view(), true)?;

    let arm = |value: f64| -> Vec<usize> {
        train.iter().copied().filter(|&i| data.z[i] == value).collect()
    };
    let mut arm_fits = Vec::with_capacity(2);
    for value in [0.0, 1.0] {
        let rows = arm(value);
        if rows.is_empty() {
            return Err(DrmlError::InvalidArgument(format!(
                "training split has no rows with Z = {value}"
            )));
        }
        let xa = data.x.select(Axis(0), &rows);
        let ya = Array1::from_iter(rows.iter().map(|&i| data.y[i]));
        let aa = Array1::from_iter(rows.iter().map(|&i| data.a[i]));
        let mu = fit(&specs.mu, xa.view(), ya.view(), binary_outcome)?;
        let lam = fit(&specs.lambda, xa.view(), aa.view(), true)?;
        arm_fits.push((mu, lam));
    }
    let (mu1, lam1) = arm_fits.pop().expect("two arms");
    let (mu0, lam0) = arm_fits.pop().expect("two arms");
    Ok(FoldFit {
        pi,
        mu0,
        mu1,
        lam0,
        lam1,
    })
}

/// Out-of-fold nuisance predictions, one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    /// Truncated to `[epsilon, 1 - epsilon]`.
    pub pi1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub lam0: Vec<f64>,
    pub lam1: Vec<f64>,
}

impl NuisancePredictions {
    pub fn n(&self) -> usize {
        self.pi1.len()
    }

    pub fn row(&self, i: usize) -> NuisanceValues {
        NuisanceValues {
            pi1: self.pi1[i],
            mu0: self.mu0[i],
            mu1: self.mu1[i],
            lam0: self.lam0[i],
            lam1: self.lam1[i],
        }
    }

    /// Same quantities for the relabelled instrument `1 - Z`.
    pub fn relabelled(&self) -> Self {
        Self {
            pi1: self.pi1.iter().map(|p| 1.0 - p).collect(),
            mu0: self.mu1.clone(),
            mu1: self.mu0.clone(),
            lam0: self.lam1.clone(),
            lam1: self.lam0.clone(),
        }
    }
}

/// Scores each row with the nuisances fitted without that row's fold.
pub fn predict_out_of_fold(
    model: &NuisanceModel,
    data: &IvDataset,
    folds: &FoldPlan,
) -> Result<NuisancePredictions> {
    let n = data.n();
    if folds.n() != n {
        return Err(DrmlError::Dimension(format!(
            "fold plan covers {} rows, dataset has {n}",
            folds.n()
        )));
    }
    let mut out = NuisancePredictions {
        pi1: vec![0.0; n],
        mu0: vec![0.0; n],
        mu1: vec![0.0; n],
        lam0: vec![0.0; n],
        lam1: vec![0.0; n],
    };
    match &model.source {
        NuisanceSource::Oracle(f) => {
            for i in 0..n {
                let v = f(data.x.row(i));
                out.pi1[i] = v.pi1;
                out.mu0[i] = v.mu0;
                out.mu1[i] = v.mu1;
                out.lam0[i] = v.lam0;
                out.lam1[i] = v.lam1;
            }
        }
        NuisanceSource::Fitted(fits) => {
            if fits.len() != folds.k {
                return Err(DrmlError::Dimension(format!(
                    "model has {} fold fits, plan has {} folds",
                    fits.len(),
                    folds.k
                )));
            }
            for (f, fit) in fits.iter().enumerate() {
                let rows = folds.rows_in(f);
                if rows.is_empty() {
                    continue;
                }
                let x = data.x.select(Axis(0), &rows);
                let targets: [(&FittedLearner, &mut Vec<f64>); 5] = [
                    (&fit.pi, &mut out.pi1),
                    (&fit.mu0, &mut out.mu0),
                    (&fit.mu1, &mut out.mu1),
                    (&fit.lam0, &mut out.lam0),
                    (&fit.lam1, &mut out.lam1),
                ];
                for (learner, dest) in targets {
                    for (&i, p) in rows.iter().zip(learner.predict(x.view())?) {
                        dest[i] = p;
                    }
                }
            }
        }
    }
    let eps = model.epsilon;
    for v in out.pi1.iter_mut() {
        *v = v.clamp(eps, 1.0 - eps);
    }
    for v in out.lam0.iter_mut().chain(out.lam1.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    if model.binary_outcome {
        for v in out.mu0.iter_mut().chain(out.mu1.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Out-of-fold fit quality of the nuisance regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    /// Bernoulli log-loss of `pi` against `Z`.
    pub pi_log_loss: f64,
    /// R² of `mu(x, Z)` against `Y`.
    pub mu_r2: f64,
    /// Bernoulli log-loss of `lambda(x, Z)` against `A`.
    pub lambda_log_loss: f64,
}

pub fn diagnostics(data: &IvDataset, pred: &NuisancePredictions) -> NuisanceDiagnostics {
    let n = data.n() as f64;
    let log_loss = |p: f64, t: f64| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    };
    let mut pi_ll = 0.0;
    let mut lam_ll = 0.0;
    let mut sse = 0.0;
    for i in 0..data.n() {
        let z = data.z[i];
        pi_ll += log_loss(pred.pi1[i], z);
        let (mu, lam) = if z == 1.0 {
            (pred.mu1[i], pred.lam1[i])
        } else {
            (pred.mu0[i], pred.lam0[i])
        };
        lam_ll += log_loss(lam, data.a[i]);
        sse += (data.y[i] - mu).powi(2);
    }
    let ybar = data.y.iter().sum::<f64>() / n;
    let sst: f64 = data.y.iter().map(|y| (y - ybar).powi(2)).sum();
    NuisanceDiagnostics {
        pi_log_loss: pi_ll / n,
        mu_r2: if sst > 0.0 { 1.0 - sse / sst } else { 0.0 },
        lambda_log_loss: lam_ll / n,
    }
}
