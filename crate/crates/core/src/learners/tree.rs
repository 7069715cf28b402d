//! CART regression trees: greedy variance-reduction splits with optional
//! minimal cost-complexity pruning.

use ndarray::{ArrayView1, ArrayView2};

use super::{content_folds, content_order, TreeParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Split feature; `None` for leaves.
    pub feature: Option<usize>,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
    pub n: usize,
    /// Within-node sum of squared errors around `value`.
    pub sse: f64,
}

/// A fitted tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            match node.feature {
                None => return node.value,
                Some(j) => at = if row[j] <= node.threshold { node.left } else { node.right },
            }
        }
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        features.rows().into_iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.count_leaves(0)
    }

    fn count_leaves(&self, at: usize) -> usize {
        let node = &self.nodes[at];
        match node.feature {
            None => 1,
            Some(_) => self.count_leaves(node.left) + self.count_leaves(node.right),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.reachable().into_iter().map(|i| &self.nodes[i]).filter(|n| n.feature.is_none())
    }

    fn reachable(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            out.push(i);
            if self.nodes[i].feature.is_some() {
                stack.push(self.nodes[i].right);
                stack.push(self.nodes[i].left);
            }
        }
        out
    }

    /// Subtree-minimising `R(T) + alpha·|T|`, smallest such subtree.
    pub fn pruned(&self, alpha: f64) -> Tree {
        let mut collapse = vec![false; self.nodes.len()];
        let tol = 1e-12 * self.nodes[0].sse.max(f64::MIN_POSITIVE);
        self.prune_cost(0, alpha, tol, &mut collapse);
        self.compact(&collapse)
    }

    fn prune_cost(&self, at: usize, alpha: f64, tol: f64, collapse: &mut [bool]) -> f64 {
        let node = &self.nodes[at];
        let as_leaf = node.sse + alpha;
        match node.feature {
            None => as_leaf,
            Some(_) => {
                let sub = self.prune_cost(node.left, alpha, tol, collapse)
                    + self.prune_cost(node.right, alpha, tol, collapse);
                if as_leaf <= sub + tol {
                    collapse[at] = true;
                    as_leaf
                } else {
                    sub
                }
            }
        }
    }

    fn compact(&self, collapse: &[bool]) -> Tree {
        let mut nodes = Vec::new();
        self.copy_into(0, collapse, &mut nodes);
        Tree { nodes }
    }

    fn copy_into(&self, at: usize, collapse: &[bool], out: &mut Vec<TreeNode>) -> usize {
        let idx = out.len();
        let mut node = self.nodes[at].clone();
        let internal = node.feature.is_some() && !collapse[at];
        if !internal {
            node.feature = None;
            node.threshold = 0.0;
            node.left = 0;
            node.right = 0;
        }
        out.push(node);
        if internal {
            let l = self.copy_into(self.nodes[at].left, collapse, out);
            let r = self.copy_into(self.nodes[at].right, collapse, out);
            out[idx].left = l;
            out[idx].right = r;
        }
        idx
    }

    /// Weakest-link penalties at which successive subtrees are pruned away,
    /// starting at 0 and ending at the penalty that collapses the root.
    pub fn complexity_path(&self) -> Vec<f64> {
        let mut collapsed = vec![false; self.nodes.len()];
        let tol = 1e-12 * self.nodes[0].sse.max(f64::MIN_POSITIVE);
        let mut path = vec![0.0];
        while self.nodes[0].feature.is_some() && !collapsed[0] {
            let mut links = Vec::new();
            self.weakest_links(0, &collapsed, &mut links);
            let alpha = links.iter().map(|&(_, g)| g).fold(f64::INFINITY, f64::min);
            for (i, g) in links {
                if g <= alpha + tol {
                    collapsed[i] = true;
                }
            }
            path.push(alpha.max(0.0));
        }
        path
    }

    // Returns (subtree SSE, leaf count) and records g(t) for internal nodes.
    fn weakest_links(
        &self,
        at: usize,
        collapsed: &[bool],
        out: &mut Vec<(usize, f64)>,
    ) -> (f64, usize) {
        let node = &self.nodes[at];
        if node.feature.is_none() || collapsed[at] {
            return (node.sse, 1);
        }
        let (rl, nl) = self.weakest_links(node.left, collapsed, out);
        let (rr, nr) = self.weakest_links(node.right, collapsed, out);
        let (r, leaves) = (rl + rr, nl + nr);
        out.push((at, (node.sse - r) / (leaves as f64 - 1.0)));
        (r, leaves)
    }
}

struct Builder<'a, 'b> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'b, f64>,
    params: TreeParams,
    nodes: Vec<TreeNode>,
    goes_left: Vec<bool>,
}

impl Builder<'_, '_> {
    /// `base` is the node's rows in content order; `sorted[j]` the same rows
    /// ordered by feature `j`.
    fn grow(&mut self, base: Vec<usize>, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let n = base.len();
        let mean = base.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse: f64 = base.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let idx = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: mean,
            n,
            sse,
        });
        let min_leaf = self.params.min_leaf;
        if depth >= self.params.max_depth || n < 2 * min_leaf || !(sse > 0.0) {
            return idx;
        }

        // Best split; scanning features and thresholds in ascending order and
        // replacing only on strict improvement breaks ties toward the lowest
        // feature index, then the smallest threshold.
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, order) in sorted.iter().enumerate() {
            let mut sum_left = 0.0;
            for k in 0..n - 1 {
                let i = order[k];
                sum_left += self.y[i] - mean;
                let n_left = k + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let here = self.x[[i, j]];
                let next = self.x[[order[k + 1], j]];
                if here >= next {
                    continue;
                }
                let gain = sum_left * sum_left * (1.0 / n_left as f64 + 1.0 / (n - n_left) as f64);
                if best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((j, 0.5 * (here + next), gain));
                }
            }
        }
        let Some((feature, threshold, gain)) = best else {
            return idx;
        };
        if !(gain > 1e-12 * sse) {
            return idx;
        }

        for &i in &base {
            self.goes_left[i] = self.x[[i, feature]] <= threshold;
        }
        let split = |rows: Vec<usize>, flags: &[bool]| -> (Vec<usize>, Vec<usize>) {
            rows.into_iter().partition(|&i| flags[i])
        };
        let (base_l, base_r) = split(base, &self.goes_left);
        let mut sorted_l = Vec::with_capacity(sorted.len());
        let mut sorted_r = Vec::with_capacity(sorted.len());
        for order in sorted {
            let (l, r) = split(order, &self.goes_left);
            sorted_l.push(l);
            sorted_r.push(r);
        }
        let left = self.grow(base_l, sorted_l, depth + 1);
        let right = self.grow(base_r, sorted_r, depth + 1);
        let node = &mut self.nodes[idx];
        node.feature = Some(feature);
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        idx
    }
}

fn grow_tree(params: &TreeParams, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, rows: &[usize]) -> Tree {
    let p = x.ncols();
    let base = {
        let sub_x = x.select(ndarray::Axis(0), rows);
        let sub_y = y.select(ndarray::Axis(0), rows);
        content_order(sub_x.view(), sub_y.view())
            .into_iter()
            .map(|k| rows[k])
            .collect::<Vec<_>>()
    };
    let sorted = (0..p)
        .map(|j| {
            let mut o = base.clone();
            o.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]));
            o
        })
        .collect();
    let mut builder = Builder {
        x,
        y,
        params: params.clone(),
        nodes: Vec::new(),
        goes_left: vec![false; x.nrows()],
    };
    builder.grow(base, sorted, 0);
    Tree {
        nodes: builder.nodes,
    }
}

pub fn fit(params: &TreeParams, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Tree {
    let all: Vec<usize> = (0..y.len()).collect();
    let full = grow_tree(params, x, y, &all);
    if !params.prune || full.nodes.len() == 1 {
        return full;
    }

    // Candidate penalties are geometric midpoints of the full tree's
    // weakest-link path, expressed relative to the root SSE so they transfer
    // to trees grown on the CV training folds.
    let root_sse = full.nodes[0].sse;
    let path = full.complexity_path();
    let candidates: Vec<f64> = (0..path.len())
        .map(|k| {
            let a = path[k];
            let b = path.get(k + 1).copied().unwrap_or(a);
            (a * b).sqrt() / root_sse
        })
        .collect();

    let k = params.prune_folds;
    let folds = content_folds(x, y, k);
    let mut cv_error = vec![0.0; candidates.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let tree = grow_tree(params, x, y, &train);
        let fold_root = tree.nodes[0].sse;
        for (c, &cp) in candidates.iter().enumerate() {
            let pruned = tree.pruned(cp * fold_root);
            cv_error[c] += test
                .iter()
                .map(|&i| (y[i] - pruned.predict_row(x.row(i))).powi(2))
                .sum::<f64>();
        }
    }
    // ties go to the simpler tree (larger penalty)
    let mut best = 0;
    for c in 1..candidates.len() {
        if cv_error[c] <= cv_error[best] {
            best = c;
        }
    }
    full.pruned(candidates[best] * root_sse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_function_is_recovered_exactly() {
        // symmetric design around zero puts the split exactly at 0
        let n = 1000;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64);
        let y = x.column(0).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let tree = fit(&TreeParams::default(), x.view(), y.view());
        assert_eq!(tree.n_leaves(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let test = Array2::from_shape_fn((5000, 1), |_| rng.gen_range(-1.0..1.0));
        let pred = tree.predict(test.view());
        let mse: f64 = pred
            .iter()
            .zip(test.column(0))
            .map(|(p, &v)| (p - if v > 0.0 { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>()
            / 5000.0;
        assert!(mse < 1e-6, "mse {mse}");
    }

    fn noisy_data(seed: u64, n: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| {
            (3.0 * x[[i, 0]] as f64).sin() + if x[[i, 1]] > 0.2 { 1.0 } else { 0.0 } + rng.gen_range(-0.5..0.5)
        });
        (x, y)
    }

    #[test]
    fn leaves_respect_min_leaf_and_depth() {
        let (x, y) = noisy_data(3, 800);
        let params = TreeParams {
            max_depth: 4,
            min_leaf: 25,
            ..TreeParams::default()
        };
        let tree = fit(&params, x.view(), y.view());
        assert!(tree.leaves().all(|l| l.n >= 25));
        assert!(tree.n_leaves() <= 16);
        let total: usize = tree.leaves().map(|l| l.n).sum();
        assert_eq!(total, 800);
    }

    #[test]
    fn pruning_never_grows_the_tree() {
        let (x, y) = noisy_data(4, 1000);
        let unpruned = fit(&TreeParams::default(), x.view(), y.view());
        let pruned = fit(
            &TreeParams {
                prune: true,
                ..TreeParams::default()
            },
            x.view(),
            y.view(),
        );
        assert!(pruned.n_leaves() <= unpruned.n_leaves());
        assert!(pruned.n_leaves() >= 2);
        let path = unpruned.complexity_path();
        assert!(path.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(unpruned.pruned(f64::INFINITY).n_leaves(), 1);
        assert_eq!(unpruned.pruned(0.0).n_leaves(), unpruned.n_leaves());
    }

    #[test]
    fn pure_noise_prunes_to_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((600, 1), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(600, |_| rng.gen_range(-1.0..1.0));
        let pruned = fit(
            &TreeParams {
                prune: true,
                ..TreeParams::default()
            },
            x.view(),
            y.view(),
        );
        assert!(pruned.n_leaves() <= 3);
    }

    #[test]
    fn predictions_constant_within_leaf_cells() {
        let (x, y) = noisy_data(6, 500);
        let tree = fit(&TreeParams::default(), x.view(), y.view());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = Array1::from(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            // nudge the first coordinate by a tiny amount away from all thresholds
            let mut b = a.clone();
            b[0] += 1e-9;
            let crosses = tree
                .nodes
                .iter()
                .any(|nd| nd.feature == Some(0) && a[0] <= nd.threshold && b[0] > nd.threshold);
            if !crosses {
                assert_eq!(tree.predict_row(a.view()), tree.predict_row(b.view()));
            }
        }
    }

    #[test]
    fn split_ties_prefer_lowest_feature() {
        // two identical features: the split must use feature 0
        let x = Array2::from_shape_fn((100, 2), |(i, _)| i as f64);
        let y = Array1::from_shape_fn(100, |i| if i >= 50 { 1.0 } else { 0.0 });
        let tree = fit(&TreeParams::default(), x.view(), y.view());
        assert_eq!(tree.nodes[0].feature, Some(0));
        assert_eq!(tree.nodes[0].threshold, 49.5);
    }

    #[test]
    fn no_features_gives_single_leaf() {
        let x = Array2::<f64>::zeros((50, 0));
        let y = Array1::from_shape_fn(50, |i| i as f64);
        let tree = fit(&TreeParams::default(), x.view(), y.view());
        assert_eq!(tree.n_leaves(), 1);
        assert!((tree.nodes[0].value - 24.5).abs() < 1e-12);
    }
}
