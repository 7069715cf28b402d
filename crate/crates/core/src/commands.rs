//! Subcommand bodies. Each reads a validated [`RunConfig`], runs the
//! estimators and writes CSV/JSON files into the output directory.

use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::Serialize;
use serde_json::{json, Value};

use crate::clate::{clate_from_pseudo, ite_from_pseudo, ClateOptions, SecondStage, MAX_DISCRETE_LEVELS};
use crate::config::{RunConfig, Subcommand};
use crate::data::{load_dataset, IvDataset};
use crate::error::{DrmlError, Result};
use crate::influence::PseudoOutcomes;
use crate::late::{
    estimate_late_drml_with_pseudo, estimate_late_tsls, estimate_late_unadjusted, LateResult,
    WEAK_INSTRUMENT_FLOOR,
};
use crate::learners::LearnerSpec;
use crate::nuisance::make_folds;
use crate::profiling::{
    profile_density, profile_levels, strata_shares, Bandwidth, DensitySpec, Stratum,
};
use crate::sensitivity::sensitivity_surface;
use crate::simulation::{
    run_experiment, ExperimentConfig, ScenarioSpec, SimEstimator, DEFAULT_TRUTH_DRAWS,
    SCENARIO2_TRUE_LATE, SCENARIO2_TRUE_LATE_SE,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_OUT_DIR: &str = "drml-iv-out";

/// Writes files with the provenance header for one run.
struct Writer {
    dir: PathBuf,
    header: String,
    meta: Value,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(cfg: &RunConfig, cmd: Subcommand) -> Result<Self> {
        let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        std::fs::create_dir_all(&dir).map_err(|e| DrmlError::Io { path: dir.clone(), source: e })?;
        let hash = cfg.hash();
        Ok(Self {
            header: format!(
                "# drml-iv {VERSION} subcommand={} seed={} config={hash}\n",
                cmd.as_str(),
                cfg.seed()
            ),
            meta: json!({
                "version": VERSION,
                "subcommand": cmd.as_str(),
                "seed": cfg.seed(),
                "config_hash": hash,
            }),
            dir,
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| DrmlError::Io { path: path.clone(), source: e })?;
        self.written.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("{}{body}", self.header);
        self.put(name, &text)
    }

    fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<()> {
        let mut v = serde_json::to_value(payload).map_err(|e| DrmlError::InvalidArgument(e.to_string()))?;
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("_meta".into(), self.meta.clone());
            }
            None => v = json!({ "_meta": self.meta.clone(), "data": v }),
        }
        let text = serde_json::to_string_pretty(&v).expect("json value serialises") + "\n";
        self.put(name, &text)
    }
}

fn load(cfg: &RunConfig) -> Result<IvDataset> {
    load_dataset(&cfg.schema()?)
}

fn drml(cfg: &RunConfig, data: &IvDataset) -> Result<(LateResult, PseudoOutcomes)> {
    let plan = make_folds(data.n(), cfg.folds, &data.z, cfg.seed())?;
    estimate_late_drml_with_pseudo(data, &plan, &cfg.learners.specs()?, cfg.epsilon, cfg.alpha)
}

/// Runs one subcommand; returns the files written.
pub fn run(cmd: Subcommand, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate(cmd)?;
    match cmd {
        Subcommand::Estimate => cmd_estimate(cfg),
        Subcommand::Clate => cmd_clate(cfg),
        Subcommand::Profile => cmd_profile(cfg),
        Subcommand::Sensitivity => cmd_sensitivity(cfg),
        Subcommand::Simulate => cmd_simulate(cfg),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load(cfg)?;
    let records = vec![
        estimate_late_unadjusted(&data, cfg.alpha)?,
        estimate_late_tsls(&data, cfg.alpha)?,
        drml(cfg, &data)?.0,
    ];
    let mut w = Writer::new(cfg, Subcommand::Estimate)?;
    let mut body = String::from("method,chi_hat,se,ci_lo,ci_hi,alpha,n,gamma_hat,delta_hat\n");
    for r in &records {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.chi_hat,
            r.se,
            r.ci_lo,
            r.ci_hi,
            r.alpha,
            r.n,
            opt(r.gamma_hat),
            opt(r.delta_hat)
        ));
    }
    w.csv("late.csv", &body)?;
    w.json("late.json", &json!({ "records": records }))?;
    Ok(w.written)
}

fn second_stage(name: Option<&str>, v: ndarray::ArrayView2<f64>) -> Result<SecondStage> {
    Ok(match name {
        None => SecondStage::default_for(v),
        Some("constant") => SecondStage::Constant,
        Some("cell_means") => SecondStage::CellMeans,
        Some(other) => SecondStage::Learner { spec: LearnerSpec::from_name(other)? },
    })
}

pub fn cmd_clate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load(cfg)?;
    let (late, pseudo) = drml(cfg, &data)?;
    let (v, names) = data.select_columns(&cfg.clate.v_columns)?;
    let mut opts = ClateOptions::new(second_stage(cfg.clate.second_stage.as_deref(), v.view())?, cfg.seed());
    opts.grid_points = cfg.clate.grid_points;
    opts.bootstrap = cfg.clate.bootstrap;
    opts.alpha = cfg.alpha;
    let res = clate_from_pseudo(&pseudo, &data.z, v.view(), names, &opts)?;

    let mut w = Writer::new(cfg, Subcommand::Clate)?;
    w.csv("clate.csv", &res.to_csv_body())?;
    let mut payload = json!({ "clate": res, "late": late });
    if cfg.clate.ite {
        let stage = second_stage(cfg.clate.second_stage.as_deref(), data.x.view())?;
        let ite = ite_from_pseudo(&pseudo, data.x.view(), &stage, WEAK_INSTRUMENT_FLOOR)?;
        let mut body = String::from("row,ite\n");
        for (i, t) in ite.ite.iter().enumerate() {
            let cell = if t.is_finite() { t.to_string() } else { String::new() };
            body.push_str(&format!("{i},{cell}\n"));
        }
        w.csv("ite.csv", &body)?;
        payload["ite"] = json!({
            "flagged": ite.flagged,
            "mean": ite.mean,
            "sd": ite.sd,
            "quantiles": { "p05": ite.quantiles[0], "p25": ite.quantiles[1], "p50": ite.quantiles[2],
                           "p75": ite.quantiles[3], "p95": ite.quantiles[4] },
            "chi_marginal": ite.chi_marginal,
        });
    }
    w.json("clate.json", &payload)?;
    Ok(w.written)
}

/// Values of one configured column. A categorical column becomes level codes
/// (0 for the reference level, `k` for the `k`-th dummy) with their labels.
fn profile_variable(data: &IvDataset, column: &str) -> Result<(Vec<f64>, Vec<String>)> {
    let (cols, names) = data.select_columns(&[column.to_string()])?;
    if !data.categorical_map.contains_key(column) {
        return Ok((cols.column(0).to_vec(), vec![]));
    }
    let codes = cols
        .axis_iter(Axis(0))
        .map(|row| row.iter().position(|&x| x == 1.0).map_or(0.0, |k| (k + 1) as f64))
        .collect();
    let reference = data.reference_levels.get(column).cloned().unwrap_or_else(|| "reference".into());
    let mut labels = vec![reference];
    labels.extend(names.iter().map(|n| n.split_once('=').map_or(n.clone(), |(_, l)| l.to_string())));
    Ok((codes, labels))
}

pub fn cmd_profile(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load(cfg)?;
    let (late, pseudo) = drml(cfg, &data)?;
    let strata: Vec<Stratum> = if cfg.profile.strata.is_empty() {
        Stratum::ALL.to_vec()
    } else {
        cfg.profile.strata.iter().map(|s| Stratum::from_name(s)).collect::<Result<_>>()?
    };
    let shares = strata_shares(&pseudo);
    let mut w = Writer::new(cfg, Subcommand::Profile)?;
    let mut body = String::from("stratum,share,se\n");
    for s in Stratum::ALL {
        let sh = shares.get(s);
        body.push_str(&format!("{},{},{}\n", s.as_str(), sh.estimate, sh.se));
    }
    w.csv("strata.csv", &body)?;

    let mut profiles = serde_json::Map::new();
    for col in &cfg.profile.v_columns {
        let (v, labels) = profile_variable(&data, col)?;
        let mut levels = v.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if !labels.is_empty() || levels.len() <= MAX_DISCRETE_LEVELS {
            let mut body = String::from("stratum,level,v0,estimate,se,lo,hi\n");
            let mut all = Vec::new();
            for &s in &strata {
                for p in profile_levels(&pseudo, &v, s, cfg.alpha)? {
                    let label = labels.get(p.v0 as usize).cloned().unwrap_or_else(|| p.v0.to_string());
                    body.push_str(&format!(
                        "{},{label},{},{},{},{},{}\n",
                        s.as_str(),
                        p.v0,
                        p.estimate,
                        p.se,
                        p.ci_lo,
                        p.ci_hi
                    ));
                    all.push(json!({ "level": label, "profile": p }));
                }
            }
            w.csv(&format!("profile_{col}.csv"), &body)?;
            profiles.insert(col.clone(), json!({ "kind": "discrete", "levels": all }));
        } else {
            let bandwidth = match cfg.profile.bandwidth {
                Some(h) => Bandwidth::Fixed { h },
                None => Bandwidth::Silverman,
            };
            let spec = DensitySpec { bandwidth, grid: vec![] };
            let mut body = String::from("stratum,v0,density,negative\n");
            let mut all = Vec::new();
            for &s in &strata {
                let d = profile_density(&pseudo, &v, &spec, s)?;
                for ((g, x), neg) in d.grid.iter().zip(&d.density).zip(&d.negative) {
                    body.push_str(&format!("{},{g},{x},{}\n", s.as_str(), *neg as u8));
                }
                all.push(json!({
                    "stratum": s,
                    "bandwidth": d.bandwidth,
                    "any_negative": d.any_negative,
                    "integral": d.integral(),
                }));
            }
            w.csv(&format!("density_{col}.csv"), &body)?;
            profiles.insert(col.clone(), json!({ "kind": "density", "strata": all }));
        }
    }
    w.json("profile.json", &json!({ "shares": shares, "late": late, "profiles": profiles }))?;
    Ok(w.written)
}

pub fn cmd_sensitivity(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load(cfg)?;
    let (late, _) = drml(cfg, &data)?;
    let delta = late.delta_hat.expect("drml reports delta");
    let s = sensitivity_surface(late.chi_hat, delta, cfg.sensitivity.delta1_points, cfg.sensitivity.delta2_points)?;
    let mut w = Writer::new(cfg, Subcommand::Sensitivity)?;
    w.csv("sensitivity_surface.csv", &s.to_csv_body())?;
    w.csv("sensitivity_frontier.csv", &s.frontier_csv_body())?;
    w.json(
        "sensitivity.json",
        &json!({
            "chi_hat": s.chi_hat,
            "delta_hat": s.delta_hat,
            "delta1_points": s.delta1_grid.len(),
            "delta2_points": s.delta2_grid.len(),
            "frontier_points": s.frontier.len(),
            "frontier_is_axes": s.frontier_is_axes,
            "late": late,
        }),
    )?;
    Ok(w.written)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let b = &cfg.simulate;
    let spec = ScenarioSpec::scenario(b.scenario).map_err(|e| DrmlError::Config(e.to_string()))?;
    let mut exp = ExperimentConfig::new(b.n_list.clone(), b.reps, cfg.seed());
    exp.estimators = b.estimators.iter().map(|e| SimEstimator::from_name(e)).collect::<Result<_>>()?;
    exp.folds = cfg.folds;
    exp.epsilon = cfg.epsilon;
    exp.alpha = cfg.alpha;
    exp.truth_draws = b.truth_draws;
    if b.scenario == 2 && b.truth_draws == DEFAULT_TRUTH_DRAWS {
        exp.truth = Some((SCENARIO2_TRUE_LATE, SCENARIO2_TRUE_LATE_SE));
    }
    let report = run_experiment(&spec, &exp)?;
    let mut w = Writer::new(cfg, Subcommand::Simulate)?;
    w.csv("simulation.csv", &report.to_csv_body())?;
    w.json("simulation.json", &report)?;
    Ok(w.written)
}

/// Machine-readable error record.
pub fn error_record(cmd: Option<Subcommand>, err: &DrmlError) -> Value {
    json!({
        "error": err.kind(),
        "message": err.to_string(),
        "subcommand": cmd.map(|c| c.as_str()),
        "exit_code": err.exit_code(),
    })
}

/// Writes `error.json` into `dir` if possible; failures are ignored.
pub fn write_error_record(dir: &Path, record: &Value) {
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), serde_json::to_string_pretty(record).unwrap_or_default() + "\n");
    }
}
