//! Principal-strata profiling: strata shares, discrete covariate profiles and
//! weighted kernel densities within a stratum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DrmlError, Result};
use crate::influence::PseudoOutcomes;
use crate::late::WEAK_INSTRUMENT_FLOOR;
use crate::stats::{mean, normal_quantile, quantile, std_dev, variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Complier,
    AlwaysTaker,
    NeverTaker,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Complier, Stratum::AlwaysTaker, Stratum::NeverTaker];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stratum::Complier => "complier",
            Stratum::AlwaysTaker => "always_taker",
            Stratum::NeverTaker => "never_taker",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| DrmlError::Config(format!("unknown stratum `{name}`")))
    }

    /// Per-row weights whose mean is the stratum share.
    pub fn weights<'a>(&self, pseudo: &'a PseudoOutcomes) -> &'a [f64] {
        match self {
            Stratum::Complier => &pseudo.delta_dot,
            Stratum::AlwaysTaker => &pseudo.lambda0_dot,
            Stratum::NeverTaker => &pseudo.lambda1_dot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataShares {
    pub complier: Share,
    pub always_taker: Share,
    pub never_taker: Share,
}

impl StrataShares {
    pub fn get(&self, s: Stratum) -> Share {
        match s {
            Stratum::Complier => self.complier,
            Stratum::AlwaysTaker => self.always_taker,
            Stratum::NeverTaker => self.never_taker,
        }
    }
}

fn share(w: &[f64]) -> Share {
    let n = w.len() as f64;
    Share {
        estimate: mean(w),
        se: if w.len() > 1 { std_dev(w) / n.sqrt() } else { 0.0 },
    }
}

pub fn strata_shares(pseudo: &PseudoOutcomes) -> StrataShares {
    StrataShares {
        complier: share(&pseudo.delta_dot),
        always_taker: share(&pseudo.lambda0_dot),
        never_taker: share(&pseudo.lambda1_dot),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProfile {
    pub stratum: Stratum,
    pub v0: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub share: f64,
}

/// `P(V = v0 | stratum)` as `P_n[w 1(V=v0)] / P_n[w]`, with a Wald interval
/// from the ratio influence function
/// `((w 1(V=v0) - N) - psi (w - D)) / D`.
pub fn profile_discrete(
    pseudo: &PseudoOutcomes,
    v: &[f64],
    v0: f64,
    stratum: Stratum,
    alpha: f64,
) -> Result<DiscreteProfile> {
    let w = stratum.weights(pseudo);
    let n = w.len();
    if v.len() != n {
        return Err(DrmlError::Dimension(format!("{} modifier values for {n} rows", v.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DrmlError::InvalidArgument(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if !v.iter().any(|&x| x == v0) {
        return Err(DrmlError::InvalidArgument(format!("level {v0} is not observed")));
    }
    let d = mean(w);
    if !(d.abs() >= WEAK_INSTRUMENT_FLOOR) {
        return Err(DrmlError::InvalidArgument(format!(
            "{} share {d} below floor {WEAK_INSTRUMENT_FLOOR}",
            stratum.as_str()
        )));
    }
    let masked: Vec<f64> = w.iter().zip(v).map(|(w, &x)| if x == v0 { *w } else { 0.0 }).collect();
    let num = mean(&masked);
    let psi = num / d;
    let ifs: Vec<f64> = masked
        .iter()
        .zip(w)
        .map(|(m, w)| ((m - num) - psi * (w - d)) / d)
        .collect();
    let se = if n > 1 { (variance(&ifs) / n as f64).sqrt() } else { 0.0 };
    let q = normal_quantile(1.0 - alpha / 2.0);
    Ok(DiscreteProfile {
        stratum,
        v0,
        estimate: psi,
        se,
        ci_lo: psi - q * se,
        ci_hi: psi + q * se,
        share: d,
    })
}

/// Profiles at every observed level of `v`, in increasing order.
pub fn profile_levels(
    pseudo: &PseudoOutcomes,
    v: &[f64],
    stratum: Stratum,
    alpha: f64,
) -> Result<Vec<DiscreteProfile>> {
    let mut levels = v.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
        .into_iter()
        .map(|v0| profile_discrete(pseudo, v, v0, stratum, alpha))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    Silverman,
    Fixed { h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub bandwidth: Bandwidth,
    /// Evaluation points; [`default_density_grid`] when empty.
    #[serde(default)]
    pub grid: Vec<f64>,
}

impl DensitySpec {
    pub fn silverman(grid: Vec<f64>) -> Self {
        Self { bandwidth: Bandwidth::Silverman, grid }
    }
}

/// `0.9 min(sd, IQR/1.34) n^(-1/5)` on the unweighted sample; falls back to
/// the sd when the IQR is zero.
pub fn silverman_bandwidth(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(DrmlError::InvalidArgument("bandwidth needs at least two values".into()));
    }
    let sd = std_dev(v);
    let iqr = (quantile(v, 0.75) - quantile(v, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let h = 0.9 * spread * (v.len() as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        Err(DrmlError::InvalidArgument("bandwidth is zero for a constant sample".into()))
    }
}

/// 201 points from `min - 3h` to `max + 3h`.
pub fn default_density_grid(v: &[f64], h: f64) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    (0..201).map(|k| lo + (hi - lo) * k as f64 / 200.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub stratum: Stratum,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub negative: Vec<bool>,
    pub any_negative: bool,
    pub share: f64,
}

impl DensityProfile {
    /// Trapezoid rule over the evaluation grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn to_csv_body(&self) -> String {
        let mut out = String::from("v0,density,negative\n");
        for ((g, d), neg) in self.grid.iter().zip(&self.density).zip(&self.negative) {
            out.push_str(&format!("{g},{d},{}\n", *neg as u8));
        }
        out
    }
}

/// `P_n[w K_h(V - v0)] / P_n[w]` with a Gaussian kernel. Negative values are
/// reported and flagged, never clipped.
pub fn profile_density(
    pseudo: &PseudoOutcomes,
    v: &[f64],
    spec: &DensitySpec,
    stratum: Stratum,
) -> Result<DensityProfile> {
    let w = stratum.weights(pseudo);
    if v.len() != w.len() {
        return Err(DrmlError::Dimension(format!("{} values for {} rows", v.len(), w.len())));
    }
    let h = match spec.bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(v)?,
        Bandwidth::Fixed { h } if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed { h } => {
            return Err(DrmlError::InvalidArgument(format!("bandwidth {h} must be positive")))
        }
    };
    let d = mean(w);
    if !(d.abs() >= WEAK_INSTRUMENT_FLOOR) {
        return Err(DrmlError::InvalidArgument(format!(
            "{} share {d} below floor {WEAK_INSTRUMENT_FLOOR}",
            stratum.as_str()
        )));
    }
    let grid = if spec.grid.is_empty() { default_density_grid(v, h) } else { spec.grid.clone() };
    let norm = 1.0 / ((2.0 * PI).sqrt() * h);
    let n = v.len() as f64;
    let density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let s: f64 = v
                .iter()
                .zip(w)
                .map(|(&x, &wi)| {
                    let t = (x - g) / h;
                    wi * (-0.5 * t * t).exp()
                })
                .sum();
            norm * s / n / d
        })
        .collect();
    let negative: Vec<bool> = density.iter().map(|&x| x < 0.0).collect();
    Ok(DensityProfile {
        stratum,
        bandwidth: h,
        any_negative: negative.iter().any(|&b| b),
        grid,
        density,
        negative,
        share: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::{delta_dot_point, strata_dot_point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Pseudo-outcomes from random observed data and random nuisances.
    fn random_pseudo(n: usize, seed: u64) -> (PseudoOutcomes, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PseudoOutcomes {
            gamma_dot: vec![0.0; n],
            delta_dot: vec![],
            lambda0_dot: vec![],
            lambda1_dot: vec![],
            gamma_hat: vec![0.0; n],
            delta_hat: vec![0.0; n],
        };
        let mut v = vec![];
        for _ in 0..n {
            let (a, z) = ((rng.gen::<f64>() < 0.5) as u8 as f64, (rng.gen::<f64>() < 0.5) as u8 as f64);
            let (l0, l1, pi) = (rng.gen_range(0.0..0.4), rng.gen_range(0.4..1.0), rng.gen_range(0.2..0.8));
            p.delta_dot.push(delta_dot_point(a, z, l0, l1, pi).unwrap());
            let (at, nt) = strata_dot_point(a, z, l0, l1, pi).unwrap();
            p.lambda0_dot.push(at);
            p.lambda1_dot.push(nt);
            v.push(rng.gen_range(0..3) as f64);
        }
        (p, v)
    }

    fn constant_weights(n: usize, w: f64) -> PseudoOutcomes {
        PseudoOutcomes {
            gamma_dot: vec![0.0; n],
            delta_dot: vec![w; n],
            lambda0_dot: vec![(1.0 - w) / 2.0; n],
            lambda1_dot: vec![(1.0 - w) / 2.0; n],
            gamma_hat: vec![0.0; n],
            delta_hat: vec![0.0; n],
        }
    }

    #[test]
    fn shares_sum_to_one() {
        for seed in 0..10 {
            let (p, _) = random_pseudo(300, seed);
            let s = strata_shares(&p);
            let total = s.complier.estimate + s.always_taker.estimate + s.never_taker.estimate;
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_compliers_reduce_to_empirical_share() {
        let p = constant_weights(10, 1.0);
        let v = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let r = profile_discrete(&p, &v, 1.0, Stratum::Complier, 0.05).unwrap();
        assert_eq!(r.estimate, 0.6);
        assert!(r.ci_lo < 0.6 && 0.6 < r.ci_hi);
    }

    #[test]
    fn discrete_se_matches_replication_spread() {
        // weights depend on V, so the ratio's two terms are correlated
        let reps = 400;
        let mut est = Vec::with_capacity(reps);
        let mut ses = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + r as u64);
            let n = 500;
            let v: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.4))).collect();
            let w: Vec<f64> = v.iter().map(|&x| 0.3 + 0.4 * x + rng.gen_range(-1.0..1.0)).collect();
            let mut p = constant_weights(n, 0.0);
            p.delta_dot = w;
            let prof = profile_discrete(&p, &v, 1.0, Stratum::Complier, 0.05).unwrap();
            est.push(prof.estimate);
            ses.push(prof.se);
        }
        let m = est.iter().sum::<f64>() / reps as f64;
        let spread = (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let mean_se = ses.iter().sum::<f64>() / reps as f64;
        assert!((mean_se / spread - 1.0).abs() < 0.15, "se {mean_se} vs spread {spread}");
    }

    #[test]
    fn partition_and_mixture_identities() {
        let (p, v) = random_pseudo(1000, 3);
        let shares = strata_shares(&p);
        for s in Stratum::ALL {
            let total: f64 = profile_levels(&p, &v, s, 0.05).unwrap().iter().map(|r| r.estimate).sum();
            assert!((total - 1.0).abs() < 1e-12, "{s:?}");
        }
        for v0 in [0.0, 1.0, 2.0] {
            let mix: f64 = Stratum::ALL
                .iter()
                .map(|&s| shares.get(s).estimate * profile_discrete(&p, &v, v0, s, 0.05).unwrap().estimate)
                .sum();
            let emp = v.iter().filter(|&&x| x == v0).count() as f64 / v.len() as f64;
            assert!((mix - emp).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_to_order_and_duplication() {
        let (p, v) = random_pseudo(200, 4);
        let base = profile_discrete(&p, &v, 2.0, Stratum::NeverTaker, 0.05).unwrap();
        let rev: Vec<usize> = (0..200).rev().collect();
        let vr: Vec<f64> = rev.iter().map(|&i| v[i]).collect();
        let r = profile_discrete(&p.subset(&rev), &vr, 2.0, Stratum::NeverTaker, 0.05).unwrap();
        assert!((r.estimate - base.estimate).abs() < 1e-12);
        let dup: Vec<usize> = (0..200).chain(0..200).collect();
        let vd: Vec<f64> = dup.iter().map(|&i| v[i]).collect();
        let r = profile_discrete(&p.subset(&dup), &vd, 2.0, Stratum::NeverTaker, 0.05).unwrap();
        assert!((r.estimate - base.estimate).abs() < 1e-12);
    }

    #[test]
    fn discrete_errors() {
        let p = constant_weights(4, 0.001);
        let v = [0.0, 1.0, 0.0, 1.0];
        assert!(profile_discrete(&p, &v, 1.0, Stratum::Complier, 0.05).is_err());
        assert!(profile_discrete(&p, &v, 5.0, Stratum::AlwaysTaker, 0.05).is_err());
        assert!(profile_discrete(&p, &v[..3], 0.0, Stratum::AlwaysTaker, 0.05).is_err());
    }

    #[test]
    fn unit_weights_give_plain_kde() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = constant_weights(300, 1.0);
        let spec = DensitySpec { bandwidth: Bandwidth::Fixed { h: 0.4 }, grid: vec![-1.0, 0.0, 0.7] };
        let r = profile_density(&p, &v, &spec, Stratum::Complier).unwrap();
        for (g, d) in r.grid.iter().zip(&r.density) {
            let kde: f64 = v
                .iter()
                .map(|x| (-0.5 * ((x - g) / 0.4f64).powi(2)).exp() / ((2.0 * PI).sqrt() * 0.4))
                .sum::<f64>()
                / 300.0;
            assert!((d - kde).abs() < 1e-12);
        }
        assert!(!r.any_negative);
    }

    #[test]
    fn silverman_rule() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let sd = std_dev(&v);
        let iqr = (quantile(&v, 0.75) - quantile(&v, 0.25)) / 1.34;
        let h = silverman_bandwidth(&v).unwrap();
        assert!((h - 0.9 * sd.min(iqr) * 100f64.powf(-0.2)).abs() < 1e-12);
        assert!(silverman_bandwidth(&[1.0; 5]).is_err());
        let p = constant_weights(2, 1.0);
        let bad = DensitySpec { bandwidth: Bandwidth::Fixed { h: 0.0 }, grid: vec![0.0] };
        assert!(profile_density(&p, &[0.0, 1.0], &bad, Stratum::Complier).is_err());
    }

    #[test]
    fn mixed_sign_weights_are_flagged_not_clipped() {
        let mut p = constant_weights(4, 0.5);
        p.delta_dot = vec![2.0, -1.5, 0.5, 0.5];
        let spec = DensitySpec { bandwidth: Bandwidth::Fixed { h: 0.1 }, grid: vec![0.0, 5.0, 10.0] };
        let r = profile_density(&p, &[0.0, 5.0, 10.0, 10.0], &spec, Stratum::Complier).unwrap();
        assert!(r.density[1] < 0.0 && r.negative[1] && r.any_negative);
        assert!(!r.negative[0]);
    }

    proptest! {
        #[test]
        fn nonnegative_weights_give_nonnegative_density(
            ws in proptest::collection::vec(0.0f64..2.0, 5..40),
            g in -3.0f64..3.0,
        ) {
            prop_assume!(mean(&ws) >= 0.01);
            let n = ws.len();
            let mut p = constant_weights(n, 1.0);
            p.delta_dot = ws;
            let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
            let spec = DensitySpec { bandwidth: Bandwidth::Fixed { h: 0.3 }, grid: vec![g] };
            let r = profile_density(&p, &v, &spec, Stratum::Complier).unwrap();
            prop_assert!(r.density[0] >= 0.0 && !r.any_negative);
        }
    }
}
