//! Isolation Forest.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::rng::SimRng;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `2 H(n-1) - 2 (n-1) / n`, with `c(1) = 0` and `c(2) = 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

/// `2^(-h / c(n))`.
pub fn score_from_path(mean_path: f64, n: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn build(data: &Array2<f64>, rows: Vec<usize>, cap: usize, rng: &mut SimRng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(data, rows, 0, cap, rng);
        tree
    }

    fn grow(&mut self, data: &Array2<f64>, rows: Vec<usize>, depth: usize, cap: usize, rng: &mut SimRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= cap || rows.len() <= 1 {
            return id;
        }
        // Only features that still vary can separate these rows.
        let ranges: Vec<(usize, f64, f64)> = (0..data.ncols())
            .filter_map(|j| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(data[[r, j]]), hi.max(data[[r, j]]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.below(ranges.len())];
        let mut value = rng.uniform_range(lo, hi);
        if value <= lo {
            value = 0.5 * (lo + hi);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| data[[i, feature]] < value);
        let left = self.grow(data, l, depth + 1, cap, rng);
        let right = self.grow(data, r, depth + 1, cap, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Edges traversed to reach a leaf, and that leaf's size.
    pub fn descend(&self, x: ArrayView1<'_, f64>) -> (usize, usize) {
        let mut at = 0;
        let mut edges = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { size } => return (edges, size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    at = if x[feature] < value { left } else { right };
                    edges += 1;
                }
            }
        }
    }

    /// Edges plus the `c(size)` adjustment for unresolved leaves.
    pub fn path_length(&self, x: ArrayView1<'_, f64>) -> f64 {
        let (edges, size) = self.descend(x);
        edges as f64 + average_path_length(size)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub tree_count: usize,
    pub trained_size: usize,
    pub dim: usize,
}

impl IsolationForest {
    pub fn fit(data: &Array2<f64>, tree_count: usize, subsample_size: usize, seed: u64) -> Result<Self, BaselineError> {
        let n = data.nrows();
        if subsample_size < 2 {
            return Err(BaselineError::InvalidParameter("subsample size must be at least 2".into()));
        }
        if subsample_size > n {
            return Err(BaselineError::InvalidParameter(format!(
                "subsample size {subsample_size} exceeds {n} training rows"
            )));
        }
        if tree_count == 0 {
            return Err(BaselineError::InvalidParameter("tree count must be positive".into()));
        }
        let cap = Self::depth_cap_for(subsample_size);
        let mut rng = SimRng::derive(seed, "iforest");
        let mut all: Vec<usize> = (0..n).collect();
        let trees = (0..tree_count)
            .map(|_| {
                rng.shuffle(&mut all);
                IsolationTree::build(data, all[..subsample_size].to_vec(), cap, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size,
            tree_count,
            trained_size: n,
            dim: data.ncols(),
        })
    }

    pub fn depth_cap_for(subsample_size: usize) -> usize {
        (subsample_size as f64).log2().ceil() as usize
    }

    pub fn depth_cap(&self) -> usize {
        Self::depth_cap_for(self.subsample_size)
    }

    pub fn mean_path_length(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        score_from_path(self.mean_path_length(x), self.subsample_size)
    }
}
