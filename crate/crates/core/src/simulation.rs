//! Simulation scenarios with explicitly monotone potential treatments, a
//! Monte Carlo oracle for the true LATE, and the estimator comparison harness.

use std::sync::Arc;

use gauss_quad::GaussLegendre;
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::IvDataset;
use crate::error::{DrmlError, Result};
use crate::late::{estimate_late_drml, estimate_late_tsls, LateResult};
use crate::nuisance::{make_folds, NuisanceModel, NuisanceSpecs, NuisanceValues};
use crate::stats::expit;

pub const QUADRATURE_NODES: usize = 64;
pub const DEFAULT_TRUTH_DRAWS: usize = 10_000_000;

/// Scenario 2 LATE from `true_late(&ScenarioSpec::scenario(2)?, 10^7, 20240601)`.
pub const SCENARIO2_TRUE_LATE: f64 = -2.822_605_770_927_146e-2;
pub const SCENARIO2_TRUE_LATE_SE: f64 = 2.308_435_161_952_705e-3;
pub const SCENARIO2_TRUTH_SEED: u64 = 20240601;

/// `c0 + c1*x1 + c2*x2 + c3*1(x1 > 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateIndex {
    pub intercept: f64,
    pub x1: f64,
    pub x2: f64,
    pub x1_pos: f64,
}

impl CovariateIndex {
    pub const fn new(intercept: f64, x1: f64, x2: f64, x1_pos: f64) -> Self {
        Self { intercept, x1, x2, x1_pos }
    }

    pub const fn constant(c: f64) -> Self {
        Self::new(c, 0.0, 0.0, 0.0)
    }

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let pos = if x1 > 0.0 { 1.0 } else { 0.0 };
        self.intercept + self.x1 * x1 + self.x2 * x2 + self.x1_pos * pos
    }
}

/// Linear predictor of the latent treatment model: a covariate index plus
/// `z*(z + x1_z*x1 + x2_z*x2) + u*U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentIndex {
    pub base: CovariateIndex,
    pub z: f64,
    pub x1_z: f64,
    pub x2_z: f64,
    pub u: f64,
}

impl TreatmentIndex {
    #[inline]
    pub fn eval(&self, x1: f64, x2: f64, z: f64, u: f64) -> f64 {
        self.base.eval(x1, x2) + z * (self.z + self.x1_z * x1 + self.x2_z * x2) + self.u * u
    }
}

/// Data-generating process. Shipped scenarios come from [`ScenarioSpec::scenario`];
/// anything else goes through [`ScenarioSpec::custom`] and has `id == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    /// Logit of `P(Z=1|X)`.
    pub pi: CovariateIndex,
    /// Logit of `E[A|X,Z,U]`.
    pub lambda: TreatmentIndex,
    /// Conditional treatment effect.
    pub r: CovariateIndex,
    /// Baseline outcome mean.
    pub s: CovariateIndex,
    pub u_outcome: f64,
    pub u_half_width: f64,
    pub outcome_sd: f64,
}

const LAMBDA_LINEAR: TreatmentIndex = TreatmentIndex {
    base: CovariateIndex::new(-0.3, -0.4, -0.14, 0.0),
    z: 1.1,
    x1_z: 0.0,
    x2_z: 0.0,
    u: 0.7,
};

const LAMBDA_THRESHOLD: TreatmentIndex = TreatmentIndex {
    base: CovariateIndex::new(-0.3, -0.4, -0.14, -0.7),
    z: 1.1,
    x1_z: -0.55,
    x2_z: 0.0,
    u: 0.7,
};

impl ScenarioSpec {
    pub fn scenario(id: u8) -> Result<Self> {
        let pi_linear = CovariateIndex::new(0.0, 0.4, -0.8, 0.0);
        let pi_threshold = CovariateIndex::new(0.0, 0.4, -0.8, 0.4);
        // -4 x1 + 6 (x2 - 0.3)
        let r_linear = CovariateIndex::new(-1.8, -4.0, 6.0, 0.0);
        // ... - 4 (1(x1 > 0) - 0.5)
        let r_threshold = CovariateIndex::new(0.2, -4.0, 6.0, -4.0);
        let s_linear = CovariateIndex::new(40.0, -7.0, -8.0, 0.0);
        let s_threshold = CovariateIndex::new(40.0, -7.0, -8.0, 10.0);
        let (pi, lambda, r, s) = match id {
            1 => (pi_threshold, LAMBDA_THRESHOLD, r_threshold, s_threshold),
            2 => (pi_linear, LAMBDA_LINEAR, r_linear, s_linear),
            3 => (pi_threshold, LAMBDA_THRESHOLD, r_linear, s_linear),
            _ => {
                return Err(DrmlError::InvalidArgument(format!(
                    "unknown scenario {id}; expected 1, 2 or 3"
                )))
            }
        };
        Ok(Self {
            id,
            pi,
            lambda,
            r,
            s,
            u_outcome: 1.5,
            u_half_width: 1.5,
            outcome_sd: 0.2,
        })
    }

    /// User-defined process sharing the covariate, `U` and noise laws of the
    /// shipped scenarios.
    pub fn custom(
        pi: CovariateIndex,
        lambda: TreatmentIndex,
        r: CovariateIndex,
        s: CovariateIndex,
    ) -> Self {
        Self {
            id: 0,
            pi,
            lambda,
            r,
            s,
            u_outcome: 1.5,
            u_half_width: 1.5,
            outcome_sd: 0.2,
        }
    }

    /// Shipped scenario `base` with the effect replaced by the constant `tau`.
    pub fn constant_effect(base: u8, tau: f64) -> Result<Self> {
        let b = Self::scenario(base)?;
        Ok(Self::custom(b.pi, b.lambda, CovariateIndex::constant(tau), b.s))
    }

    #[inline]
    pub fn pi1(&self, x1: f64, x2: f64) -> f64 {
        expit(self.pi.eval(x1, x2))
    }

    #[inline]
    pub fn lambda_latent(&self, x1: f64, x2: f64, z: f64, u: f64) -> f64 {
        expit(self.lambda.eval(x1, x2, z, u))
    }

    #[inline]
    pub fn effect(&self, x1: f64, x2: f64) -> f64 {
        self.r.eval(x1, x2)
    }

    #[inline]
    pub fn baseline(&self, x1: f64, x2: f64) -> f64 {
        self.s.eval(x1, x2)
    }

    pub fn name(&self) -> String {
        if self.id == 0 {
            "custom".into()
        } else {
            format!("scenario{}", self.id)
        }
    }
}

/// Potential treatments and the unobserved confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub u: Vec<f64>,
}

impl Latent {
    pub fn is_complier(&self, i: usize) -> bool {
        self.a1[i] > self.a0[i]
    }
}

/// One draw of `(X1, X2, U, A0, A1)`; the caller decides `Z` and `Y`.
#[inline]
fn draw_unit<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Result<(f64, f64, f64, f64, f64)> {
    let x1 = rng.gen_range(-1.0..1.0);
    let x2 = if rng.gen::<f64>() < 0.3 { 1.0 } else { 0.0 };
    let u = rng.gen_range(-spec.u_half_width..spec.u_half_width);
    let l0 = spec.lambda_latent(x1, x2, 0.0, u);
    let l1 = spec.lambda_latent(x1, x2, 1.0, u);
    if l1 < l0 {
        return Err(DrmlError::MonotonicityViolation { x1, x2, u });
    }
    let a0 = if rng.gen::<f64>() < l0 { 1.0 } else { 0.0 };
    let switch = if l0 < 1.0 { (l1 - l0) / (1.0 - l0) } else { 0.0 };
    let a1 = if a0 == 1.0 || rng.gen::<f64>() < switch { 1.0 } else { 0.0 };
    Ok((x1, x2, u, a0, a1))
}

/// Simulated dataset with covariates `x1, x2` plus its latent variables.
pub fn generate_dataset(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<(IvDataset, Latent)> {
    if n == 0 {
        return Err(DrmlError::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, 2));
    let (mut y, mut a, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut latent = Latent {
        a0: Vec::with_capacity(n),
        a1: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (x1, x2, u, a0, a1) = draw_unit(spec, &mut rng)?;
        let zi = if rng.gen::<f64>() < spec.pi1(x1, x2) { 1.0 } else { 0.0 };
        let ai = (1.0 - zi) * a0 + zi * a1;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let yi = spec.effect(x1, x2) * ai
            + spec.baseline(x1, x2)
            + spec.u_outcome * u
            + spec.outcome_sd * noise;
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        y.push(yi);
        a.push(ai);
        z.push(zi);
        latent.a0.push(a0);
        latent.a1.push(a1);
        latent.u.push(u);
    }
    let ds = IvDataset::new(y, a, z, x, vec!["x1".into(), "x2".into()])?;
    Ok((ds, latent))
}

/// Expectation over `U ~ Unif(-h, h)` by Gauss-Legendre quadrature.
#[derive(Debug, Clone)]
pub struct UQuadrature {
    nodes: Vec<(f64, f64)>,
}

impl UQuadrature {
    pub fn new(half_width: f64, degree: usize) -> Self {
        let rule = GaussLegendre::new(degree.max(2)).expect("degree >= 2");
        // E f(U) = (1/2h) ∫ f = (1/2) Σ w_i f(h t_i)
        let nodes = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(t, w)| (half_width * t, 0.5 * w))
            .collect();
        Self { nodes }
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|&(u, w)| w * f(u)).sum()
    }
}

/// `E[A|X=x, Z=z]` with `U` integrated out.
pub fn lambda_marginal(spec: &ScenarioSpec, quad: &UQuadrature, x1: f64, x2: f64, z: f64) -> f64 {
    quad.expect(|u| spec.lambda_latent(x1, x2, z, u))
}

/// True nuisance values at `x = (x1, x2)`. Since `Z` is independent of `U`
/// given `X`, `E[Y|X,Z] = r(X) lambda(X,Z) + s(X)`.
pub fn oracle_values(spec: &ScenarioSpec, quad: &UQuadrature, x1: f64, x2: f64) -> NuisanceValues {
    let lam0 = lambda_marginal(spec, quad, x1, x2, 0.0);
    let lam1 = lambda_marginal(spec, quad, x1, x2, 1.0);
    let (r, s) = (spec.effect(x1, x2), spec.baseline(x1, x2));
    NuisanceValues {
        pi1: spec.pi1(x1, x2),
        mu0: r * lam0 + s,
        mu1: r * lam1 + s,
        lam0,
        lam1,
    }
}

/// Nuisance model returning the true functions for data from `spec`.
pub fn oracle_model(spec: &ScenarioSpec, epsilon: f64) -> Result<NuisanceModel> {
    let quad = Arc::new(UQuadrature::new(spec.u_half_width, QUADRATURE_NODES));
    let spec = spec.clone();
    NuisanceModel::oracle(epsilon, false, move |x: ArrayView1<f64>| {
        oracle_values(&spec, &quad, x[0], x[1])
    })
}

/// splitmix64 finaliser over a combined key.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(31);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

const TRUTH_CHUNK: usize = 1 << 16;

/// Monte Carlo complier-average of `r(X)`: `(value, mc_se)`.
pub fn true_late(spec: &ScenarioSpec, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if draws < 100_000 {
        return Err(DrmlError::InvalidArgument(format!(
            "true_late needs at least 1e5 draws, got {draws}"
        )));
    }
    let chunks = draws.div_ceil(TRUTH_CHUNK);
    // (count, sum, sum of squares) per chunk, reduced in chunk order
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = TRUTH_CHUNK.min(draws - c * TRUTH_CHUNK);
            let (mut k, mut s, mut ss) = (0usize, 0.0, 0.0);
            for _ in 0..len {
                let (x1, x2, _, a0, a1) = draw_unit(spec, &mut rng)?;
                if a1 > a0 {
                    let r = spec.effect(x1, x2);
                    k += 1;
                    s += r;
                    ss += r * r;
                }
            }
            Ok((k, s, ss))
        })
        .collect::<Result<Vec<_>>>()?;
    let (k, s, ss) = parts
        .iter()
        .fold((0usize, 0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    if k < 2 {
        return Err(DrmlError::NoCompliers(draws));
    }
    let m = s / k as f64;
    let var = (ss / k as f64 - m * m).max(0.0) * k as f64 / (k - 1) as f64;
    Ok((m, (var / k as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEstimator {
    Tsls,
    DrmlParametric,
    DrmlNonparametric,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 3] = [
        SimEstimator::Tsls,
        SimEstimator::DrmlParametric,
        SimEstimator::DrmlNonparametric,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SimEstimator::Tsls => "tsls",
            SimEstimator::DrmlParametric => "drml_parametric",
            SimEstimator::DrmlNonparametric => "drml_nonparametric",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == name)
            .ok_or_else(|| DrmlError::Config(format!("unknown estimator `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<SimEstimator>,
    pub seed: u64,
    pub folds: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Precomputed `(true_late, mc_se)`; computed from `truth_draws` when absent.
    pub truth: Option<(f64, f64)>,
    pub truth_draws: usize,
}

impl ExperimentConfig {
    pub fn new(n_list: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            n_list,
            reps,
            estimators: SimEstimator::ALL.to_vec(),
            seed,
            folds: 5,
            epsilon: 0.01,
            alpha: 0.05,
            truth: None,
            truth_draws: DEFAULT_TRUTH_DRAWS,
        }
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub estimator: SimEstimator,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub scenario: String,
    pub estimator: SimEstimator,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub seed: u64,
    pub reps: usize,
    pub true_late: f64,
    pub true_late_se: f64,
    pub cells: Vec<ReportCell>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl SimulationReport {
    pub fn cell(&self, estimator: SimEstimator, n: usize) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.n == n)
    }

    /// Long-form rows: scenario, estimator, n, bias, rmse, coverage, width, failures.
    pub fn to_csv_body(&self) -> String {
        let mut out = String::from("scenario,estimator,n,reps,bias,rmse,coverage,width,failures\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.scenario,
                c.estimator.as_str(),
                c.n,
                c.reps,
                c.bias,
                c.rmse,
                c.coverage,
                c.width,
                c.failures
            ));
        }
        out
    }
}

fn run_estimator(
    est: SimEstimator,
    data: &IvDataset,
    cfg: &ExperimentConfig,
    fold_seed: u64,
) -> Result<LateResult> {
    match est {
        SimEstimator::Tsls => estimate_late_tsls(data, cfg.alpha),
        SimEstimator::DrmlParametric | SimEstimator::DrmlNonparametric => {
            let specs = if est == SimEstimator::DrmlParametric {
                NuisanceSpecs::parametric()
            } else {
                NuisanceSpecs::ensemble()
            };
            let plan = make_folds(data.n(), cfg.folds, &data.z, fold_seed)?;
            estimate_late_drml(data, &plan, &specs, cfg.epsilon, cfg.alpha)
        }
    }
}

/// Replicates every `n` in `cfg.n_list` `cfg.reps` times; all estimators see
/// the same dataset within a replicate.
pub fn run_experiment(spec: &ScenarioSpec, cfg: &ExperimentConfig) -> Result<SimulationReport> {
    if cfg.reps < 2 {
        return Err(DrmlError::InvalidArgument("reps must be at least 2".into()));
    }
    if cfg.n_list.is_empty() || cfg.estimators.is_empty() {
        return Err(DrmlError::InvalidArgument(
            "n_list and estimators must be nonempty".into(),
        ));
    }
    let (truth, truth_se) = match cfg.truth {
        Some(t) => t,
        None => true_late(spec, cfg.truth_draws, mix_seed(cfg.seed, u64::MAX, 0))?,
    };

    let jobs: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .enumerate()
        .flat_map(|(j, _)| (0..cfg.reps).map(move |r| (j, r)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(j, rep)| {
            let n = cfg.n_list[j];
            let seed = mix_seed(cfg.seed, n as u64, rep as u64);
            let (data, _) = generate_dataset(spec, n, seed)?;
            Ok(cfg
                .estimators
                .iter()
                .map(|&est| {
                    let r = run_estimator(est, &data, cfg, seed.wrapping_add(1));
                    ReplicationRecord {
                        estimator: est,
                        n,
                        rep,
                        seed,
                        estimate: r.as_ref().ok().map(|r| r.chi_hat),
                        ci_lo: r.as_ref().ok().map(|r| r.ci_lo),
                        ci_hi: r.as_ref().ok().map(|r| r.ci_hi),
                        error: r.err().map(|e| e.to_string()),
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ReplicationRecord> = per_job.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &n in &cfg.n_list {
        for &est in &cfg.estimators {
            cells.push(summarise(spec, est, n, truth, &records));
        }
    }
    Ok(SimulationReport {
        scenario: spec.name(),
        seed: cfg.seed,
        reps: cfg.reps,
        true_late: truth,
        true_late_se: truth_se,
        cells,
        records,
    })
}

fn summarise(
    spec: &ScenarioSpec,
    est: SimEstimator,
    n: usize,
    truth: f64,
    records: &[ReplicationRecord],
) -> ReportCell {
    let rows: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.estimator == est && r.n == n)
        .collect();
    let ok: Vec<&ReplicationRecord> = rows.iter().copied().filter(|r| r.estimate.is_some()).collect();
    let m = ok.len() as f64;
    let (mut sum, mut sq, mut cover, mut width) = (0.0, 0.0, 0.0, 0.0);
    for r in &ok {
        let (e, lo, hi) = (r.estimate.unwrap(), r.ci_lo.unwrap(), r.ci_hi.unwrap());
        sum += e;
        sq += (e - truth) * (e - truth);
        if lo <= truth && truth <= hi {
            cover += 1.0;
        }
        width += hi - lo;
    }
    let mean_estimate = sum / m;
    ReportCell {
        scenario: spec.name(),
        estimator: est,
        n,
        reps: ok.len(),
        failures: rows.len() - ok.len(),
        mean_estimate,
        bias: mean_estimate - truth,
        rmse: (sq / m).sqrt(),
        coverage: cover / m,
        width: width / m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;

    #[test]
    fn shipped_coefficients() {
        let s1 = ScenarioSpec::scenario(1).unwrap();
        assert_eq!(s1.pi, CovariateIndex::new(0.0, 0.4, -0.8, 0.4));
        assert_eq!(s1.lambda.base, CovariateIndex::new(-0.3, -0.4, -0.14, -0.7));
        assert_eq!((s1.lambda.z, s1.lambda.x1_z, s1.lambda.x2_z, s1.lambda.u), (1.1, -0.55, 0.0, 0.7));
        assert_eq!(s1.s, CovariateIndex::new(40.0, -7.0, -8.0, 10.0));
        // r = -4 x1 + 6 (x2 - 0.3) - 4 (1(x1>0) - 0.5)
        for &(x1, x2) in &[(-0.5, 0.0), (0.5, 1.0), (0.9, 0.0), (-0.1, 1.0)] {
            let pos = if x1 > 0.0 { 1.0 } else { 0.0 };
            let r = -4.0 * x1 + 6.0 * (x2 - 0.3) - 4.0 * (pos - 0.5);
            assert!((s1.effect(x1, x2) - r).abs() < 1e-14);
        }

        let s2 = ScenarioSpec::scenario(2).unwrap();
        assert_eq!(s2.pi, CovariateIndex::new(0.0, 0.4, -0.8, 0.0));
        assert_eq!(s2.lambda.base, CovariateIndex::new(-0.3, -0.4, -0.14, 0.0));
        assert_eq!((s2.lambda.z, s2.lambda.x1_z, s2.lambda.u), (1.1, 0.0, 0.7));
        assert_eq!(s2.s, CovariateIndex::new(40.0, -7.0, -8.0, 0.0));
        assert!((s2.effect(0.25, 1.0) - (-1.0 + 6.0 * 0.7)).abs() < 1e-14);

        let s3 = ScenarioSpec::scenario(3).unwrap();
        assert_eq!(s3.pi, s1.pi);
        assert_eq!(s3.lambda, s1.lambda);
        assert_eq!(s3.r, s2.r);
        assert_eq!(s3.s, s2.s);
        for s in [&s1, &s2, &s3] {
            assert_eq!((s.u_outcome, s.u_half_width, s.outcome_sd), (1.5, 1.5, 0.2));
        }
        assert!(ScenarioSpec::scenario(4).is_err());
    }

    #[test]
    fn monotone_by_construction() {
        for id in 1..=3 {
            let spec = ScenarioSpec::scenario(id).unwrap();
            for seed in 0..3 {
                let (ds, lat) = generate_dataset(&spec, 2000, seed).unwrap();
                assert!(lat.a0.iter().zip(&lat.a1).all(|(a0, a1)| a1 >= a0));
                for i in 0..ds.n() {
                    let expect = if ds.z[i] == 1.0 { lat.a1[i] } else { lat.a0[i] };
                    assert_eq!(ds.a[i], expect);
                }
            }
        }
    }

    #[test]
    fn violation_is_an_error() {
        let mut lambda = LAMBDA_LINEAR;
        lambda.z = -1.0;
        let spec = ScenarioSpec::custom(
            CovariateIndex::default(),
            lambda,
            CovariateIndex::constant(1.0),
            CovariateIndex::default(),
        );
        assert!(matches!(
            generate_dataset(&spec, 10, 0),
            Err(DrmlError::MonotonicityViolation { .. })
        ));
    }

    #[test]
    fn instrument_rate_matches_integral() {
        let spec = ScenarioSpec::scenario(2).unwrap();
        let (ds, _) = generate_dataset(&spec, 1_000_000, 5).unwrap();
        // ∫ expit(0.4 x1 - 0.8 x2) dP(x) by a fine midpoint rule on x1
        let m = 20_000;
        let integral: f64 = (0..m)
            .map(|k| {
                let x1 = -1.0 + (k as f64 + 0.5) * 2.0 / m as f64;
                0.7 * expit(0.4 * x1) + 0.3 * expit(0.4 * x1 - 0.8)
            })
            .sum::<f64>()
            / m as f64;
        assert!((mean(&ds.z) - integral).abs() < 0.002);
    }

    #[test]
    fn instrument_is_relevant() {
        for id in 1..=3 {
            let spec = ScenarioSpec::scenario(id).unwrap();
            let (ds, _) = generate_dataset(&spec, 100_000, 7).unwrap();
            let (a1, n1) = ds.a.iter().zip(&ds.z).filter(|(_, &z)| z == 1.0).fold((0.0, 0.0), |s, (a, _)| (s.0 + a, s.1 + 1.0));
            let (a0, n0) = ds.a.iter().zip(&ds.z).filter(|(_, &z)| z == 0.0).fold((0.0, 0.0), |s, (a, _)| (s.0 + a, s.1 + 1.0));
            assert!(a1 / n1 > a0 / n0);
        }
    }

    #[test]
    fn treatment_rates_match_latent_model_in_bins() {
        let spec = ScenarioSpec::scenario(2).unwrap();
        let (ds, lat) = generate_dataset(&spec, 400_000, 9).unwrap();
        // bins: x1 quartile x x2 x z x U tercile
        let mut sums = std::collections::BTreeMap::<(i32, i32, i32, i32), (f64, f64, f64)>::new();
        for i in 0..ds.n() {
            let (x1, x2, z, u) = (ds.x[[i, 0]], ds.x[[i, 1]], ds.z[i], lat.u[i]);
            let key = (((x1 + 1.0) * 2.0) as i32, x2 as i32, z as i32, ((u + 1.5) / 1.0) as i32);
            let e = sums.entry(key).or_insert((0.0, 0.0, 0.0));
            e.0 += ds.a[i];
            e.1 += spec.lambda_latent(x1, x2, z, u);
            e.2 += 1.0;
        }
        for (_, (a, l, c)) in sums {
            assert!((a / c - l / c).abs() < 0.02, "{} vs {}", a / c, l / c);
        }
    }

    #[test]
    fn quadrature_integrates_uniform_moments() {
        let q = UQuadrature::new(1.5, QUADRATURE_NODES);
        assert!((q.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!(q.expect(|u| u).abs() < 1e-13);
        assert!((q.expect(|u| u * u) - 0.75).abs() < 1e-13);
    }

    /// Complier share and LATE by nested quadrature over (X1, X2, U).
    fn late_by_quadrature(spec: &ScenarioSpec) -> f64 {
        let qu = UQuadrature::new(spec.u_half_width, 64);
        // split X1 at the threshold so the rule sees smooth pieces
        let half = GaussLegendre::new(64).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (x2, px2) in [(0.0, 0.7), (1.0, 0.3)] {
            for (lo, hi) in [(-1.0, 0.0), (0.0, 1.0)] {
                for &(t, w) in half.as_node_weight_pairs() {
                    let x1 = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                    let wx = 0.25 * w * px2; // density 1/2 times half-interval length 1/2
                    let pc = qu.expect(|u| {
                        spec.lambda_latent(x1, x2, 1.0, u) - spec.lambda_latent(x1, x2, 0.0, u)
                    });
                    num += wx * pc * spec.effect(x1, x2);
                    den += wx * pc;
                }
            }
        }
        num / den
    }

    #[test]
    fn true_late_matches_quadrature() {
        for id in 1..=3 {
            let spec = ScenarioSpec::scenario(id).unwrap();
            let (v, se) = true_late(&spec, 1_000_000, 11).unwrap();
            let q = late_by_quadrature(&spec);
            assert!((v - q).abs() < 4.0 * se, "scenario {id}: {v} ± {se} vs {q}");
        }
    }

    #[test]
    fn frozen_scenario2_constant_agrees_with_quadrature() {
        let q = late_by_quadrature(&ScenarioSpec::scenario(2).unwrap());
        assert!((SCENARIO2_TRUE_LATE - q).abs() < 3.0 * SCENARIO2_TRUE_LATE_SE);
    }

    #[test]
    fn constant_effect_truth() {
        let spec = ScenarioSpec::constant_effect(1, 2.5).unwrap();
        let (v, _) = true_late(&spec, 200_000, 3).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn true_late_stable_across_seeds() {
        let spec = ScenarioSpec::scenario(1).unwrap();
        let (a, sa) = true_late(&spec, 500_000, 1).unwrap();
        let (b, sb) = true_late(&spec, 500_000, 2).unwrap();
        assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
        assert!(true_late(&spec, 1000, 1).is_err());
    }

    #[test]
    fn oracle_lambda_matches_simulated_rates() {
        let spec = ScenarioSpec::scenario(1).unwrap();
        let q = UQuadrature::new(1.5, QUADRATURE_NODES);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x1, x2) = (0.3, 1.0);
        let m = 200_000;
        let hits = (0..m)
            .filter(|_| {
                let u = rng.gen_range(-1.5..1.5);
                rng.gen::<f64>() < spec.lambda_latent(x1, x2, 1.0, u)
            })
            .count();
        let p = lambda_marginal(&spec, &q, x1, x2, 1.0);
        assert!((hits as f64 / m as f64 - p).abs() < 4.0 * (p * (1.0 - p) / m as f64).sqrt());
    }

    #[test]
    fn experiment_is_deterministic_and_consistent() {
        let spec = ScenarioSpec::scenario(2).unwrap();
        let mut cfg = ExperimentConfig::new(vec![300], 3, 17);
        cfg.estimators = vec![SimEstimator::Tsls, SimEstimator::DrmlParametric];
        cfg.truth = Some((1.0, 0.0));
        let a = run_experiment(&spec, &cfg).unwrap();
        let b = run_experiment(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records, b.records);
        assert_eq!(a.cells.len(), 2);
        for c in &a.cells {
            assert_eq!(c.reps + c.failures, 3);
            assert!(c.rmse * c.rmse >= c.bias * c.bias - 1e-12);
        }
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = serial.install(|| run_experiment(&spec, &cfg)).unwrap();
        assert_eq!(a, c);
        assert!(a.to_csv_body().starts_with("scenario,estimator,n,"));
    }

    #[test]
    fn too_few_reps() {
        let spec = ScenarioSpec::scenario(2).unwrap();
        let cfg = ExperimentConfig::new(vec![300], 1, 0);
        assert!(run_experiment(&spec, &cfg).is_err());
    }

    #[test]
    fn seed_mixing_separates_counters() {
        let s: std::collections::BTreeSet<u64> =
            (0..50).flat_map(|a| (0..50).map(move |b| mix_seed(7, a, b))).collect();
        assert_eq!(s.len(), 2500);
    }
}
