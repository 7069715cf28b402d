//! Conditional LATE by second-stage regression of the pseudo-outcomes on a
//! modifier set `V`, with percentile bootstrap bands over frozen nuisances.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::IvDataset;
use crate::error::{DrmlError, Result};
use crate::influence::{compute_pseudo_outcomes, PseudoOutcomes};
use crate::late::WEAK_INSTRUMENT_FLOOR;
use crate::learners::{self, FittedLearner, LearnerSpec};
use crate::nuisance::{fit_nuisances, predict_out_of_fold, FoldPlan, NuisanceSpecs};
use crate::stats::{mean, quantile_sorted, std_dev};

pub const DEFAULT_BOOTSTRAP: usize = 500;
pub const DEFAULT_GRID_POINTS: usize = 50;
/// Columns with at most this many distinct values are treated as discrete.
pub const MAX_DISCRETE_LEVELS: usize = 10;
const MAX_RESAMPLE_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecondStage {
    /// Sample mean; ignores `V`.
    Constant,
    /// Mean within each observed combination of `V` values.
    CellMeans,
    Learner { spec: LearnerSpec },
}

impl SecondStage {
    /// Cell means when every modifier is discrete, otherwise the stacked ensemble.
    pub fn default_for(v: ArrayView2<f64>) -> Self {
        if v.ncols() == 0 {
            SecondStage::Constant
        } else if v.columns().into_iter().all(|c| distinct(c.iter().copied()).len() <= MAX_DISCRETE_LEVELS) {
            SecondStage::CellMeans
        } else {
            SecondStage::Learner { spec: LearnerSpec::ensemble() }
        }
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn row_key(row: ndarray::ArrayView1<f64>) -> Vec<u64> {
    row.iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Clone)]
enum StageFit {
    Constant(f64),
    Cells(BTreeMap<Vec<u64>, f64>),
    Learner(FittedLearner),
}

impl StageFit {
    fn fit(stage: &SecondStage, v: ArrayView2<f64>, target: &[f64]) -> Result<Self> {
        Ok(match stage {
            SecondStage::Constant => StageFit::Constant(mean(target)),
            SecondStage::CellMeans => {
                let mut acc: BTreeMap<Vec<u64>, (f64, usize)> = BTreeMap::new();
                for (row, t) in v.rows().into_iter().zip(target) {
                    let e = acc.entry(row_key(row)).or_insert((0.0, 0));
                    e.0 += t;
                    e.1 += 1;
                }
                StageFit::Cells(acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect())
            }
            SecondStage::Learner { spec } => {
                let y = ndarray::ArrayView1::from(target);
                StageFit::Learner(learners::fit(spec, v, y, false)?)
            }
        })
    }

    /// Unobserved cells evaluate to NaN.
    fn predict(&self, grid: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(match self {
            StageFit::Constant(c) => vec![*c; grid.nrows()],
            StageFit::Cells(map) => grid
                .rows()
                .into_iter()
                .map(|r| map.get(&row_key(r)).copied().unwrap_or(f64::NAN))
                .collect(),
            StageFit::Learner(f) => f.predict(grid)?,
        })
    }
}

/// Per-column grids combined as a Cartesian product (last column fastest).
/// Discrete columns use their observed levels; continuous ones use `points`
/// equispaced values between the 2nd and 98th percentiles.
pub fn default_grid(v: ArrayView2<f64>, points: usize) -> Array2<f64> {
    let q = v.ncols();
    let axes: Vec<Vec<f64>> = v
        .columns()
        .into_iter()
        .map(|c| {
            let levels = distinct(c.iter().copied());
            if levels.len() <= MAX_DISCRETE_LEVELS {
                return levels;
            }
            let mut sorted = c.to_vec();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = (quantile_sorted(&sorted, 0.02), quantile_sorted(&sorted, 0.98));
            let m = points.max(2);
            (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut grid = Array2::<f64>::zeros((total, q));
    for i in 0..total {
        let mut rem = i;
        for j in (0..q).rev() {
            let len = axes[j].len();
            grid[[i, j]] = axes[j][rem % len];
            rem /= len;
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClateOptions {
    pub second_stage: SecondStage,
    /// Evaluation points over `V`; built by [`default_grid`] when absent.
    pub v_grid: Option<Vec<Vec<f64>>>,
    pub grid_points: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub floor: f64,
}

impl ClateOptions {
    pub fn new(second_stage: SecondStage, seed: u64) -> Self {
        Self {
            second_stage,
            v_grid: None,
            grid_points: DEFAULT_GRID_POINTS,
            bootstrap: DEFAULT_BOOTSTRAP,
            alpha: 0.05,
            seed,
            floor: WEAK_INSTRUMENT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClateResult {
    pub modifier_columns: Vec<String>,
    pub v_grid: Vec<Vec<f64>>,
    pub gamma_v: Vec<f64>,
    pub delta_v: Vec<f64>,
    /// `None` where `|delta_v| < floor` or the grid point is unsupported.
    pub chi_v: Vec<Option<f64>>,
    pub flagged: Vec<bool>,
    pub band_lo: Vec<Option<f64>>,
    pub band_hi: Vec<Option<f64>>,
    pub bootstrap: usize,
    pub bootstrap_retries: usize,
    pub alpha: f64,
    pub floor: f64,
    pub second_stage: SecondStage,
    pub chi_marginal: f64,
}

impl ClateResult {
    /// One row per grid point: v..., gamma, delta, chi, lo, hi, flagged.
    pub fn to_csv_body(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::new();
        for c in &self.modifier_columns {
            out.push_str(&format!("v_{c},"));
        }
        out.push_str("gamma,delta,chi,lo,hi,flagged\n");
        for i in 0..self.v_grid.len() {
            for v in &self.v_grid[i] {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.gamma_v[i],
                self.delta_v[i],
                opt(self.chi_v[i]),
                opt(self.band_lo[i]),
                opt(self.band_hi[i]),
                self.flagged[i] as u8
            ));
        }
        out
    }
}

fn grid_array(grid: &[Vec<f64>], q: usize) -> Result<Array2<f64>> {
    if grid.iter().any(|r| r.len() != q) {
        return Err(DrmlError::Dimension(format!("grid rows must have {q} entries")));
    }
    Ok(Array2::from_shape_fn((grid.len(), q), |(i, j)| grid[i][j]))
}

fn ratio_on_grid(
    stage: &SecondStage,
    v: ArrayView2<f64>,
    pseudo: &PseudoOutcomes,
    grid: ArrayView2<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = StageFit::fit(stage, v, &pseudo.gamma_dot)?.predict(grid)?;
    let d = StageFit::fit(stage, v, &pseudo.delta_dot)?.predict(grid)?;
    Ok((g, d))
}

/// Second stage, grid ratio and bootstrap bands from precomputed
/// pseudo-outcomes. `z` is needed only to reject one-arm resamples.
pub fn clate_from_pseudo(
    pseudo: &PseudoOutcomes,
    z: &[f64],
    v: ArrayView2<f64>,
    modifier_columns: Vec<String>,
    opts: &ClateOptions,
) -> Result<ClateResult> {
    let n = pseudo.n();
    if v.nrows() != n || z.len() != n {
        return Err(DrmlError::Dimension(format!(
            "{} modifier rows and {} instrument values for {n} observations",
            v.nrows(),
            z.len()
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(DrmlError::InvalidArgument(format!("alpha {} must lie in (0, 1)", opts.alpha)));
    }
    let q = v.ncols();
    let grid = match &opts.v_grid {
        Some(g) => grid_array(g, q)?,
        None => default_grid(v, opts.grid_points),
    };
    let (gamma_v, delta_v) = ratio_on_grid(&opts.second_stage, v, pseudo, grid.view())?;
    let flagged: Vec<bool> = delta_v.iter().map(|d| !(d.abs() >= opts.floor)).collect();
    let chi_v: Vec<Option<f64>> = gamma_v
        .iter()
        .zip(&delta_v)
        .zip(&flagged)
        .map(|((g, d), &f)| if f { None } else { Some(g / d) })
        .collect();

    let draws = (0..opts.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let mut retries = 0;
            let rows = loop {
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let ones = rows.iter().filter(|&&i| z[i] == 1.0).count();
                if ones > 0 && ones < n {
                    break rows;
                }
                retries += 1;
                if retries > MAX_RESAMPLE_RETRIES {
                    return Err(DrmlError::InvalidArgument(
                        "bootstrap could not draw both instrument arms".into(),
                    ));
                }
            };
            let vb = v.select(Axis(0), &rows);
            let (g, d) = ratio_on_grid(&opts.second_stage, vb.view(), &pseudo.subset(&rows), grid.view())?;
            let chi: Vec<f64> = g.iter().zip(&d).map(|(g, d)| g / d).collect();
            Ok((chi, retries))
        })
        .collect::<Result<Vec<_>>>()?;
    let bootstrap_retries = draws.iter().map(|(_, r)| r).sum();

    let m = grid.nrows();
    let (mut band_lo, mut band_hi) = (vec![None; m], vec![None; m]);
    if !draws.is_empty() {
        for k in 0..m {
            if flagged[k] {
                continue;
            }
            let mut col: Vec<f64> = draws.iter().map(|(c, _)| c[k]).filter(|x| x.is_finite()).collect();
            if col.is_empty() {
                continue;
            }
            col.sort_by(f64::total_cmp);
            band_lo[k] = Some(quantile_sorted(&col, opts.alpha / 2.0));
            band_hi[k] = Some(quantile_sorted(&col, 1.0 - opts.alpha / 2.0));
        }
    }

    Ok(ClateResult {
        modifier_columns,
        v_grid: grid.rows().into_iter().map(|r| r.to_vec()).collect(),
        gamma_v,
        delta_v,
        chi_v,
        flagged,
        band_lo,
        band_hi,
        bootstrap: opts.bootstrap,
        bootstrap_retries,
        alpha: opts.alpha,
        floor: opts.floor,
        second_stage: opts.second_stage.clone(),
        chi_marginal: mean(&pseudo.gamma_dot) / mean(&pseudo.delta_dot),
    })
}

fn out_of_fold_pseudo(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
) -> Result<PseudoOutcomes> {
    let model = fit_nuisances(data, folds, specs, epsilon)?;
    let pred = predict_out_of_fold(&model, data, folds)?;
    compute_pseudo_outcomes(data, &pred)
}

/// Cross-fitted conditional LATE over the covariates named in `v_columns`.
pub fn estimate_clate(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
    v_columns: &[String],
    opts: &ClateOptions,
) -> Result<ClateResult> {
    let (v, names) = data.select_columns(v_columns)?;
    let pseudo = out_of_fold_pseudo(data, folds, specs, epsilon)?;
    clate_from_pseudo(&pseudo, &data.z, v.view(), names, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteSummary {
    /// `chi(V_i)` per row; NaN where `|delta(V_i)| < floor`.
    pub ite: Vec<f64>,
    pub flagged: usize,
    pub mean: f64,
    pub sd: f64,
    /// 5th, 25th, 50th, 75th and 95th percentiles of the unflagged values.
    pub quantiles: [f64; 5],
    pub chi_marginal: f64,
}

/// Second-stage ratio at each row's own modifier values.
pub fn ite_from_pseudo(
    pseudo: &PseudoOutcomes,
    v: ArrayView2<f64>,
    second_stage: &SecondStage,
    floor: f64,
) -> Result<IteSummary> {
    if v.nrows() != pseudo.n() {
        return Err(DrmlError::Dimension("modifier rows must match pseudo-outcomes".into()));
    }
    let (g, d) = ratio_on_grid(second_stage, v, pseudo, v)?;
    let ite: Vec<f64> = g
        .iter()
        .zip(&d)
        .map(|(g, d)| if d.abs() >= floor { g / d } else { f64::NAN })
        .collect();
    let mut ok: Vec<f64> = ite.iter().copied().filter(|x| x.is_finite()).collect();
    ok.sort_by(f64::total_cmp);
    let qs = [0.05, 0.25, 0.5, 0.75, 0.95];
    let quantiles = if ok.is_empty() {
        [f64::NAN; 5]
    } else {
        qs.map(|p| quantile_sorted(&ok, p))
    };
    Ok(IteSummary {
        flagged: ite.len() - ok.len(),
        mean: mean(&ok),
        sd: if ok.len() > 1 { std_dev(&ok) } else { 0.0 },
        quantiles,
        ite,
        chi_marginal: mean(&pseudo.gamma_dot) / mean(&pseudo.delta_dot),
    })
}

/// Individual effect estimates with every covariate as a modifier.
pub fn ite_distribution(
    data: &IvDataset,
    folds: &FoldPlan,
    specs: &NuisanceSpecs,
    epsilon: f64,
    second_stage: &SecondStage,
) -> Result<IteSummary> {
    let pseudo = out_of_fold_pseudo(data, folds, specs, epsilon)?;
    ite_from_pseudo(&pseudo, data.x.view(), second_stage, WEAK_INSTRUMENT_FLOOR)
}
