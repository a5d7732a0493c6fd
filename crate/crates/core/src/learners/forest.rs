//! Random-forest regressor: CART trees grown on bootstrap resamples.
//!
//! Splits maximize variance reduction over a per-split random feature subset
//! (sqrt(p) by default). Thresholds are midpoints between consecutive
//! distinct values. Ties are broken by lowest feature index, then lowest
//! threshold, so training is fully deterministic given the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Number of candidate features per split; `None` means `ceil(sqrt(p))`.
    #[serde(default)]
    pub feature_subsample: Option<usize>,
    /// Draw a bootstrap resample (with replacement, same size) per tree.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 5, feature_subsample: None, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidConfig("forest needs n_trees >= 1 and min_leaf >= 1".into()));
        }
        if self.feature_subsample == Some(0) {
            return Err(Error::InvalidConfig("feature_subsample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Node {
    feature: usize,
    threshold: f64,
    /// Children indices; leaves keep `left == right == usize::MAX`.
    left: usize,
    right: usize,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self { feature: 0, threshold: 0.0, left: usize::MAX, right: usize::MAX, value }
    }

    fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, features: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.is_leaf() {
                return node.value;
            }
            k = if features[node.feature] <= node.threshold { node.left } else { node.right };
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

impl Forest {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        s / self.trees.len() as f64
    }
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    n_features: usize,
    k_features: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl<'a> Builder<'a> {
    fn grow(&mut self, rows: &mut Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.ys[r]).sum();
        let mean = sum / n as f64;
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            self.nodes.push(Node::leaf(mean));
            return self.nodes.len() - 1;
        }

        let candidates = sample_features(self.n_features, self.k_features, rng);
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &candidates {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.xs[r][f], self.ys[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += pairs[i].1;
                // Candidate split between positions i and i+1.
                if pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                // Maximizing sum_l^2/n_l + sum_r^2/n_r is variance reduction.
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64;
                let threshold = 0.5 * (pairs[i].0 + pairs[i + 1].0);
                // Strict improvement keeps the lowest feature index and the
                // lowest threshold on ties (candidates ascend in both).
                if best.map_or(true, |(s, _, _)| score > s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            self.nodes.push(Node::leaf(mean));
            return self.nodes.len() - 1;
        };

        let (mut left_rows, mut right_rows): (Vec<usize>, Vec<usize>) =
            rows.drain(..).partition(|&r| self.xs[r][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::leaf(mean)); // placeholder
        let left = self.grow(&mut left_rows, depth + 1, rng);
        let right = self.grow(&mut right_rows, depth + 1, rng);
        self.nodes[slot] = Node { feature, threshold, left, right, value: mean };
        slot
    }
}

/// Distinct feature indices, ascending so the tie rule is well defined.
fn sample_features(p: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= p {
        return (0..p).collect();
    }
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..k {
        let j = rng.gen_range(i..p);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Grows the forest. Tree `t` draws its bootstrap sample and split features
/// from an independent stream keyed by `(seed, t)`.
pub fn fit_forest(xs: &[Vec<f64>], ys: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    params.validate()?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::ShapeMismatch("forest training set is empty".into()));
    }
    let p = xs[0].len();
    let k_features = params
        .feature_subsample
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p.max(1));

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut builder = Builder {
            xs,
            ys,
            n_features: p,
            k_features,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            nodes: Vec::new(),
        };
        builder.grow(&mut rows, 0, &mut rng);
        trees.push(Tree { nodes: builder.nodes });
    }
    Ok(Forest { trees, n_features: p })
}
