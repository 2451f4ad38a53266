//! A small bagged regression forest used as the tuner's surrogate model.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
    pub min_samples_split: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 32, feature_fraction: 5.0 / 6.0, min_samples_split: 3, max_depth: 20 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<Tree>,
}

impl RegressionForest {
    /// Fits one tree per bootstrap resample of `(xs, ys)`.
    pub fn fit<R: Rng + ?Sized>(xs: &[Vec<f64>], ys: &[f64], params: &ForestParams, rng: &mut R) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty(), "cannot fit a forest on zero samples");
        let n = xs.len();
        let dim = xs[0].len();
        let max_features = ((dim as f64 * params.feature_fraction).ceil() as usize).clamp(1, dim.max(1));
        let trees = (0..params.n_trees)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut builder = TreeBuilder { xs, ys, params, max_features, dim, nodes: Vec::new() };
                builder.grow(rows, 0, rng);
                Tree { nodes: builder.nodes }
            })
            .collect();
        Self { trees }
    }

    /// Mean and variance of the per-tree predictions.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let n = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    params: &'a ForestParams,
    max_features: usize,
    dim: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn grow<R: Rng + ?Sized>(&mut self, rows: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let mean = rows.iter().map(|&r| self.ys[r]).sum::<f64>() / rows.len() as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if rows.len() < self.params.min_samples_split || depth >= self.params.max_depth || self.dim == 0 {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| self.xs[row][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Exhaustive variance-reduction split over a random feature subset.
    fn best_split<R: Rng + ?Sized>(&self, rows: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let features = sample_indices(rng, self.dim, self.max_features);
        let total: f64 = rows.iter().map(|&r| self.ys[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| self.ys[r] * self.ys[r]).sum();
        let n = rows.len() as f64;
        let parent_sse = total_sq - total * total / n;
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in features.iter() {
            let mut sorted: Vec<(f64, f64)> = rows.iter().map(|&r| (self.xs[r][feature], self.ys[r])).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut left_sum, mut left_sq) = (0.0, 0.0);
            for i in 0..sorted.len() - 1 {
                left_sum += sorted[i].1;
                left_sq += sorted[i].1 * sorted[i].1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, feature, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
                }
            }
        }
        best.filter(|(sse, _, _)| *sse < parent_sse - 1e-12).map(|(_, f, t)| (f, t))
    }
}
