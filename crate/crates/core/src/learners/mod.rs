//! Regression learners used for every nuisance and second-stage fit.
//!
//! All learners share one entry point, [`fit`], and produce an immutable
//! [`FittedLearner`]. Fits are deterministic: any internal cross-validation
//! assigns folds from a content-sorted row order, so the result does not
//! depend on how the input rows happen to be ordered.

mod linear;
mod logistic;
mod stack;
mod tree;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DrmlError, Result};

pub use linear::LinearFit;
pub use logistic::LogisticFit;
pub use stack::StackFit;
pub use tree::{Tree, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    /// Cost-complexity pruning with a cross-validated penalty.
    #[serde(default)]
    pub prune: bool,
    #[serde(default = "default_folds")]
    pub prune_folds: usize,
}

fn default_max_depth() -> usize {
    6
}
fn default_min_leaf() -> usize {
    20
}
fn default_folds() -> usize {
    5
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: default_max_depth(),
            min_leaf: default_min_leaf(),
            prune: false,
            prune_folds: default_folds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackParams {
    pub members: Vec<LearnerSpec>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
}

/// Which learner to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Ordinary least squares with intercept.
    Linear,
    /// Logistic regression by IRLS; targets must lie in [0, 1].
    Logistic,
    /// Logistic for probability targets, linear otherwise.
    Glm,
    Tree(TreeParams),
    Stack(StackParams),
}

impl LearnerSpec {
    pub fn tree(prune: bool) -> Self {
        LearnerSpec::Tree(TreeParams {
            prune,
            ..TreeParams::default()
        })
    }

    /// Pruned tree, unpruned tree and a generalized linear model, stacked.
    pub fn ensemble() -> Self {
        LearnerSpec::Stack(StackParams {
            members: vec![Self::tree(true), Self::tree(false), LearnerSpec::Glm],
            cv_folds: default_folds(),
        })
    }

    /// Looks up a learner by its short name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(LearnerSpec::Linear),
            "logistic" => Ok(LearnerSpec::Logistic),
            "glm" | "parametric" => Ok(LearnerSpec::Glm),
            "tree" => Ok(Self::tree(false)),
            "pruned_tree" => Ok(Self::tree(true)),
            "stack" | "ensemble" | "nonparametric" => Ok(Self::ensemble()),
            other => Err(DrmlError::Config(format!("unknown learner `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Tree(t) => {
                if t.max_depth == 0 || t.min_leaf == 0 {
                    return Err(DrmlError::InvalidArgument(
                        "tree max_depth and min_leaf must be positive".into(),
                    ));
                }
                if t.prune && t.prune_folds < 2 {
                    return Err(DrmlError::InvalidArgument("prune_folds must be >= 2".into()));
                }
                Ok(())
            }
            LearnerSpec::Stack(s) => {
                if s.members.is_empty() {
                    return Err(DrmlError::InvalidArgument("stack has no members".into()));
                }
                if s.cv_folds < 2 {
                    return Err(DrmlError::InvalidArgument("stack cv_folds must be >= 2".into()));
                }
                for m in &s.members {
                    if matches!(m, LearnerSpec::Stack(_)) {
                        return Err(DrmlError::InvalidArgument(
                            "stack members may not be stacks".into(),
                        ));
                    }
                    m.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Constant(f64),
    Linear(LinearFit),
    Logistic(LogisticFit),
    Tree(Tree),
    Stack(StackFit),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedLearner {
    pub n_features: usize,
    pub model: FittedModel,
}

impl FittedLearner {
    pub fn constant(value: f64, n_features: usize) -> Self {
        Self {
            n_features,
            model: FittedModel::Constant(value),
        }
    }

    /// Stack weights, if this is a stack.
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.model {
            FittedModel::Stack(s) => Some(&s.weights),
            _ => None,
        }
    }

    /// True when an iterative fit hit its iteration cap.
    pub fn warning(&self) -> bool {
        match &self.model {
            FittedModel::Logistic(l) => !l.converged,
            FittedModel::Stack(s) => s.members.iter().any(FittedLearner::warning),
            _ => false,
        }
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(DrmlError::Dimension(format!(
                "learner trained on {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        Ok(self.predict_unchecked(features))
    }

    fn predict_unchecked(&self, features: ArrayView2<f64>) -> Vec<f64> {
        match &self.model {
            FittedModel::Constant(c) => vec![*c; features.nrows()],
            FittedModel::Linear(l) => l.predict(features),
            FittedModel::Logistic(l) => l.predict(features),
            FittedModel::Tree(t) => t.predict(features),
            FittedModel::Stack(s) => s.predict(features),
        }
    }
}

/// Fits `spec` to `(features, target)`.
pub fn fit(
    spec: &LearnerSpec,
    features: ArrayView2<f64>,
    target: ArrayView1<f64>,
    is_probability: bool,
) -> Result<FittedLearner> {
    spec.validate()?;
    let (n, p) = features.dim();
    if n != target.len() {
        return Err(DrmlError::Dimension(format!(
            "{n} feature rows for {} targets",
            target.len()
        )));
    }
    if n == 0 {
        return Err(DrmlError::EmptyDataset);
    }
    if target.iter().any(|t| !t.is_finite()) {
        return Err(DrmlError::InvalidArgument("non-finite target".into()));
    }
    if is_probability && target.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(DrmlError::InvalidArgument(
            "probability target outside [0, 1]".into(),
        ));
    }
    let first = target[0];
    if target.iter().all(|&t| t == first) {
        return Ok(FittedLearner::constant(first, p));
    }
    let model = match spec {
        LearnerSpec::Linear => FittedModel::Linear(linear::fit(features, target)?),
        LearnerSpec::Logistic => FittedModel::Logistic(logistic::fit(features, target)?),
        LearnerSpec::Glm if is_probability => {
            FittedModel::Logistic(logistic::fit(features, target)?)
        }
        LearnerSpec::Glm => FittedModel::Linear(linear::fit(features, target)?),
        LearnerSpec::Tree(params) => FittedModel::Tree(tree::fit(params, features, target)),
        LearnerSpec::Stack(params) => {
            FittedModel::Stack(stack::fit(params, features, target, is_probability)?)
        }
    };
    Ok(FittedLearner {
        n_features: p,
        model,
    })
}

/// Row permutation that sorts rows by content (features, then target).
/// Used to assign internal CV folds independently of input row order.
pub(crate) fn content_order(features: ArrayView2<f64>, target: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..target.len()).collect();
    idx.sort_by(|&i, &j| {
        for (a, b) in features.row(i).iter().zip(features.row(j).iter()) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        target[i].total_cmp(&target[j])
    });
    idx
}

/// Fold id per row: round-robin over the content-sorted order.
pub(crate) fn content_folds(
    features: ArrayView2<f64>,
    target: ArrayView1<f64>,
    k: usize,
) -> Vec<usize> {
    let mut folds = vec![0; target.len()];
    for (rank, i) in content_order(features, target).into_iter().enumerate() {
        folds[i] = rank % k;
    }
    folds
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_variance_target_gives_constant() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = Array1::from_elem(30, 0.7);
        for spec in [
            LearnerSpec::Linear,
            LearnerSpec::Logistic,
            LearnerSpec::tree(true),
            LearnerSpec::ensemble(),
        ] {
            let f = fit(&spec, x.view(), y.view(), true).unwrap();
            assert_eq!(f.model, FittedModel::Constant(0.7));
            assert_eq!(f.predict(x.view()).unwrap(), vec![0.7; 30]);
        }
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i + j) as f64);
        let y = Array1::from_shape_fn(10, |i| i as f64);
        let f = fit(&LearnerSpec::Linear, x.view(), y.view(), false).unwrap();
        let bad = Array2::<f64>::zeros((3, 3));
        assert!(matches!(f.predict(bad.view()), Err(DrmlError::Dimension(_))));
    }

    #[test]
    fn nested_stacks_are_rejected() {
        let spec = LearnerSpec::Stack(StackParams {
            members: vec![LearnerSpec::ensemble()],
            cv_folds: 5,
        });
        assert!(spec.validate().is_err());
        let empty = LearnerSpec::Stack(StackParams {
            members: vec![],
            cv_folds: 5,
        });
        assert!(empty.validate().is_err());
    }

    #[test]
    fn probability_target_range_checked() {
        let x = Array2::<f64>::zeros((3, 1));
        let y = Array1::from(vec![0.0, 2.0, 1.0]);
        assert!(fit(&LearnerSpec::Logistic, x.view(), y.view(), true).is_err());
    }

    #[test]
    fn fits_are_invariant_to_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<(f64, f64, f64)> = (0..150)
            .map(|_| {
                let a = (rng.gen_range(0..6) as f64) / 2.0;
                let b = rng.gen_range(0..2) as f64;
                (a, b, if rng.gen::<f64>() < 0.3 + 0.1 * a { 1.0 } else { 0.0 })
            })
            .collect();
        // duplicate every row, then shuffle
        let mut rows: Vec<_> = base.iter().chain(base.iter()).copied().collect();
        let build = |rows: &[(f64, f64, f64)]| {
            let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| {
                if j == 0 {
                    rows[i].0
                } else {
                    rows[i].1
                }
            });
            let y = Array1::from_iter(rows.iter().map(|r| r.2));
            (x, y)
        };
        let (x1, y1) = build(&rows);
        use rand::seq::SliceRandom;
        rows.shuffle(&mut rng);
        let (x2, y2) = build(&rows);
        let grid = Array2::from_shape_fn((12, 2), |(i, j)| {
            if j == 0 {
                (i % 6) as f64 / 2.0
            } else {
                (i / 6) as f64
            }
        });
        for spec in [LearnerSpec::tree(false), LearnerSpec::tree(true)] {
            let f1 = fit(&spec, x1.view(), y1.view(), true).unwrap();
            let f2 = fit(&spec, x2.view(), y2.view(), true).unwrap();
            assert_eq!(f1, f2);
        }
        for spec in [LearnerSpec::Linear, LearnerSpec::Logistic, LearnerSpec::ensemble()] {
            let p1 = fit(&spec, x1.view(), y1.view(), true)
                .unwrap()
                .predict(grid.view())
                .unwrap();
            let p2 = fit(&spec, x2.view(), y2.view(), true)
                .unwrap()
                .predict(grid.view())
                .unwrap();
            for (a, b) in p1.iter().zip(&p2) {
                assert!((a - b).abs() < 1e-9, "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn spec_names_resolve() {
        assert_eq!(LearnerSpec::from_name("stack").unwrap(), LearnerSpec::ensemble());
        assert!(LearnerSpec::from_name("forest").is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct W {
            l: LearnerSpec,
        }
        let w = W {
            l: LearnerSpec::ensemble(),
        };
        let s = toml::to_string(&w).unwrap();
        let back: W = toml::from_str(&s).unwrap();
        assert_eq!(back.l, w.l);
    }
}
