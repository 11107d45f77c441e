//! Mini-batch SGD with early stopping on the optimization split.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, NnError};
use crate::rng::SimRng;

/// Opt_DS MSE above this multiple of the initial value counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_n: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_n: 0.01,
            epochs: 100,
            batch_size: 32,
            seed: 7,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if !(self.lr_n > 0.0 && self.lr_n.is_finite()) {
            return bad("lr_n must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub opt_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest Opt_DS MSE.
    pub model: AutoencoderModel,
    pub best_epoch: usize,
    pub best_opt_mse: f64,
    pub initial_opt_mse: f64,
    pub history: Vec<EpochRecord>,
    pub lr_n: f64,
}

/// Tracks the best score seen and says when `patience` epochs have passed
/// without a strict improvement. Epoch 0 is the untrained model.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, initial: f64) -> Self {
        Self {
            patience,
            best: initial,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `score` for `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains on normalized `t_ds`, early-stopping on normalized `opt_ds`.
pub fn train(
    model: AutoencoderModel,
    t_ds: &Array2<f64>,
    opt_ds: &Array2<f64>,
    config: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    if t_ds.nrows() == 0 || opt_ds.nrows() == 0 {
        return Err(NnError::EmptyBatch);
    }
    let initial = mean(&model.reconstruction_errors(opt_ds)?);
    let mut stopper = EarlyStopper::new(config.patience, initial);
    let mut best = model.clone();
    let mut model = model;
    let mut rng = SimRng::derive(config.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..t_ds.nrows()).collect();
    let mut history = Vec::new();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = t_ds.select(Axis(0), chunk);
            weighted_loss += model.batch_loss(&batch)? * chunk.len() as f64;
            let grads = model.backward(&batch)?;
            model.apply_gradients(&grads, config.lr_n);
        }
        let opt_mse = mean(&model.reconstruction_errors(opt_ds)?);
        history.push(EpochRecord {
            epoch,
            train_mse: weighted_loss / t_ds.nrows() as f64,
            opt_mse,
        });
        if !opt_mse.is_finite() || opt_mse > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(NnError::Diverged {
                epoch,
                opt_mse,
                initial,
                lr_n: config.lr_n,
            });
        }
        let stop = stopper.observe(epoch, opt_mse);
        if stopper.best_epoch() == epoch {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch: stopper.best_epoch(),
        best_opt_mse: stopper.best(),
        initial_opt_mse: initial,
        history,
        lr_n: config.lr_n,
    })
}

/// Trains once per learning rate from the same initial model and keeps the
/// run with the lowest Opt_DS MSE. Diverged candidates are skipped; if all
/// diverge the last error is returned.
pub fn tune_learning_rate(
    model: &AutoencoderModel,
    t_ds: &Array2<f64>,
    opt_ds: &Array2<f64>,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<TrainOutcome, NnError> {
    if grid.is_empty() {
        return train(model.clone(), t_ds, opt_ds, config);
    }
    let mut best: Option<TrainOutcome> = None;
    let mut last_err = None;
    for &lr_n in grid {
        let cfg = TrainConfig { lr_n, ..config.clone() };
        match train(model.clone(), t_ds, opt_ds, &cfg) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.best_opt_mse < b.best_opt_mse) {
                    best = Some(out);
                }
            }
            Err(e @ NnError::Diverged { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Activation, Architecture};

    fn linear_data(n: usize, seed: u64) -> Array2<f64> {
        // Rank-2 data in 6 dimensions: a 2-wide bottleneck can reconstruct it.
        let mut rng = SimRng::new(seed);
        let mut flat = Vec::with_capacity(n * 6);
        for _ in 0..n {
            let a = 0.5 * rng.normal();
            let b = 0.5 * rng.normal();
            flat.extend_from_slice(&[a, b, a + b, a - b, 0.5 * a, -b]);
        }
        Array2::from_shape_vec((n, 6), flat).unwrap()
    }

    #[test]
    fn early_stop_rule() {
        // Improves to epoch 4, then strictly worsens.
        let scores = [5.0, 4.0, 3.0, 2.0, 2.5, 3.0, 3.5, 4.0];
        let mut s = EarlyStopper::new(3, 10.0);
        let mut stopped_at = None;
        for (i, &v) in scores.iter().enumerate() {
            if s.observe(i + 1, v) {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(7));
        assert_eq!(s.best_epoch(), 4);
        assert_eq!(s.best(), 2.0);
    }

    #[test]
    fn equal_score_is_not_improvement() {
        let mut s = EarlyStopper::new(1, 1.0);
        assert!(s.observe(1, 1.0));
        assert_eq!(s.best_epoch(), 0);
    }

    #[test]
    fn identical_points_converge() {
        let arch = Architecture::new(vec![4, 2, 4], Activation::Tanh).unwrap();
        let model = init_model(&arch, &mut SimRng::new(1)).unwrap();
        let row = [0.8, -0.3, 0.5, 1.2];
        let data = Array2::from_shape_fn((40, 4), |(_, j)| row[j]);
        let cfg = TrainConfig {
            lr_n: 0.1,
            epochs: 300,
            batch_size: 8,
            seed: 1,
            patience: 300,
        };
        let out = train(model, &data, &data, &cfg).unwrap();
        assert!(out.model.batch_loss(&data).unwrap() < 1e-4);
        assert!(out.history.last().unwrap().train_mse < 1e-4);
    }

    #[test]
    fn returns_best_epoch_weights_and_is_deterministic() {
        let arch = Architecture::new(vec![6, 3, 2, 3, 6], Activation::Tanh).unwrap();
        let model = init_model(&arch, &mut SimRng::new(5)).unwrap();
        let t = linear_data(200, 1);
        let o = linear_data(100, 2);
        let cfg = TrainConfig {
            lr_n: 0.05,
            epochs: 40,
            batch_size: 16,
            seed: 3,
            patience: 4,
        };
        let a = train(model.clone(), &t, &o, &cfg).unwrap();
        let b = train(model, &t, &o, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);

        let best = a.history.iter().map(|r| r.opt_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_opt_mse, best);
        assert!(a.best_opt_mse < a.initial_opt_mse);
        let recomputed = mean(&a.model.reconstruction_errors(&o).unwrap());
        assert_eq!(recomputed, a.best_opt_mse);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let arch = Architecture::new(vec![6, 3, 6], Activation::Relu).unwrap();
        let model = init_model(&arch, &mut SimRng::new(5)).unwrap();
        let t = linear_data(100, 1) * 50.0;
        let cfg = TrainConfig {
            lr_n: 10.0,
            epochs: 20,
            batch_size: 10,
            seed: 3,
            patience: 20,
        };
        assert!(matches!(train(model, &t, &t, &cfg), Err(NnError::Diverged { .. })));
    }

    #[test]
    fn tuning_picks_lowest_opt_mse() {
        let arch = Architecture::new(vec![6, 3, 2, 3, 6], Activation::Tanh).unwrap();
        let model = init_model(&arch, &mut SimRng::new(5)).unwrap();
        let t = linear_data(150, 1);
        let o = linear_data(60, 2);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 16,
            patience: 3,
            ..TrainConfig::default()
        };
        let grid = [0.1, 0.01, 0.001];
        let tuned = tune_learning_rate(&model, &t, &o, &cfg, &grid).unwrap();
        for lr in grid {
            let single = train(model.clone(), &t, &o, &TrainConfig { lr_n: lr, ..cfg.clone() });
            if let Ok(s) = single {
                assert!(tuned.best_opt_mse <= s.best_opt_mse);
            }
        }
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { lr_n: 0.0, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { patience: 0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
