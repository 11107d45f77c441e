//! Local Outlier Factor with brute-force neighbor search.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use super::BaselineError;

/// Reachability distances are floored here so duplicate points keep a
/// finite density.
pub const MIN_REACH: f64 = 1e-12;

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LofModel {
    pub k: usize,
    points: Array2<f64>,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

impl LofModel {
    pub fn fit(data: &Array2<f64>, k: usize) -> Result<Self, BaselineError> {
        let n = data.nrows();
        if k == 0 || k >= n {
            return Err(BaselineError::InvalidParameter(format!("LOF needs 1 <= k < n, got k={k}, n={n}")));
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| knn(data, data.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|nb| nb[k - 1].1).collect();
        let lrd = neighbors
            .iter()
            .map(|nb| local_density(nb, &k_distance))
            .collect();
        Ok(Self {
            k,
            points: data.clone(),
            k_distance,
            lrd,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    fn lof_from(&self, neighbors: &[(usize, f64)]) -> f64 {
        let own = local_density(neighbors, &self.k_distance);
        neighbors.iter().map(|&(j, _)| self.lrd[j]).sum::<f64>() / (neighbors.len() as f64 * own)
    }

    /// LOF of a new point against the training set.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.lof_from(&knn(&self.points, x, self.k, None))
    }

    /// LOF of training point `i`, excluding itself from its neighborhood.
    pub fn training_score(&self, i: usize) -> f64 {
        self.lof_from(&knn(&self.points, self.points.row(i), self.k, Some(i)))
    }
}

/// The `k` nearest rows to `x` as `(index, distance)`, nearest first, ties
/// broken by index.
fn knn(data: &Array2<f64>, x: ArrayView1<'_, f64>, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..data.nrows())
        .filter(|&j| Some(j) != skip)
        .map(|j| (j, distance(x, data.row(j))))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all
}

fn local_density(neighbors: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let mean_reach = neighbors
        .iter()
        .map(|&(j, d)| d.max(k_distance[j]).max(MIN_REACH))
        .sum::<f64>()
        / neighbors.len() as f64;
    1.0 / mean_reach
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use ndarray::array;

    #[test]
    fn uniform_cluster_interior_near_one() {
        let mut rng = SimRng::new(4);
        let data = Array2::from_shape_fn((400, 2), |_| rng.uniform());
        let m = LofModel::fit(&data, 10).unwrap();
        let s = m.score(array![0.5, 0.5].view());
        assert!((0.8..=1.2).contains(&s), "{s}");
    }

    #[test]
    fn isolated_point_above_two() {
        let mut rng = SimRng::new(4);
        let data = Array2::from_shape_fn((200, 2), |_| 0.01 * rng.normal());
        let m = LofModel::fit(&data, 5).unwrap();
        assert!(m.score(array![1.0, 1.0].view()) > 2.0);
    }

    #[test]
    fn duplicates_and_full_neighborhood_stay_finite() {
        let data = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let m = LofModel::fit(&data, 3).unwrap();
        for i in 0..4 {
            let s = m.training_score(i);
            assert!(s.is_finite() && s > 0.0, "{i}: {s}");
        }
        assert!(m.score(array![1.0, 1.0].view()).is_finite());
    }

    #[test]
    fn k_bounds() {
        let data = array![[0.0], [1.0], [2.0]];
        assert!(LofModel::fit(&data, 0).is_err());
        assert!(LofModel::fit(&data, 3).is_err());
        assert!(LofModel::fit(&data, 2).is_ok());
    }

    #[test]
    fn training_scores_positive() {
        let mut rng = SimRng::new(9);
        let data = Array2::from_shape_fn((100, 3), |_| rng.normal());
        let m = LofModel::fit(&data, 7).unwrap();
        assert!((0..100).all(|i| {
            let s = m.training_score(i);
            s.is_finite() && s > 0.0
        }));
    }
}
