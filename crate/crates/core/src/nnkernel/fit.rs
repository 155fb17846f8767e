use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::optim::OptimizerState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Feature rows with binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<Self> {
        let (rows, _) = x.batch_dims();
        if x.shape().len() != 2 || rows != y.len() {
            return Err(Error::Dimension(format!(
                "feature matrix {:?} against {} targets",
                x.shape(),
                y.len()
            )));
        }
        Ok(TrainingData { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.batch_dims().1
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingData {
        TrainingData {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 20,
            batch_size: 10,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn accuracy(probs: &[f64], y: &[f64]) -> f64 {
    let hits = probs
        .iter()
        .zip(y)
        .filter(|(&p, &t)| (p >= 0.5) == (t >= 0.5))
        .count();
    hits as f64 / y.len() as f64
}

fn evaluate(network: &Network, data: &TrainingData) -> Result<(f64, f64)> {
    let p = network.predict(&data.x)?;
    let loss = super::loss::bce_loss(p.values(), &data.y)?;
    Ok((loss, accuracy(p.values(), &data.y)))
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { path, reason } => Error::Training {
            epoch,
            reason: format!("{path}: {reason}"),
        },
        other => other,
    }
}

/// Mini-batch training with validation-loss early stopping.
///
/// Batches are drawn from a per-epoch shuffle seeded by `seed`. After every
/// epoch the validation loss is compared with the best so far; the best
/// weights are checkpointed, and training halts once `patience` epochs pass
/// without a strict improvement.
pub fn fit(
    mut network: Network,
    train: &TrainingData,
    val: &TrainingData,
    schedule: TrainSchedule,
    optimizer: &mut OptimizerState,
    seed: u64,
) -> Result<FitOutcome> {
    if schedule.epochs == 0 {
        return Err(Error::Argument("epochs must be positive".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    if schedule.patience == 0 {
        return Err(Error::Argument("patience must be at least 1".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if schedule.batch_size > train.len() {
        return Err(Error::Argument(format!(
            "batch size {} exceeds the {} training rows",
            schedule.batch_size,
            train.len()
        )));
    }
    for (name, d) in [("training", train), ("validation", val)] {
        if d.width() != network.input_width() {
            return Err(Error::Dimension(format!(
                "{name} rows have {} features, network expects {}",
                d.width(),
                network.input_width()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            let batch = train.subset(chunk);
            let probs = network
                .forward_train(&batch.x)
                .map_err(|e| diverged(epoch, e))?;
            let loss = super::loss::bce_loss(probs.values(), &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite batch loss {loss}"),
                });
            }
            let grads = network.backward(&batch.y)?;
            network
                .apply_gradients(&grads, optimizer)
                .map_err(|e| diverged(epoch, e))?;
        }

        let (train_loss, train_accuracy) =
            evaluate(&network, train).map_err(|e| diverged(epoch, e))?;
        let (val_loss, val_accuracy) = evaluate(&network, val).map_err(|e| diverged(epoch, e))?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("loss became non-finite (train {train_loss}, val {val_loss})"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, network.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                stopped_early = epoch < schedule.epochs;
                break;
            }
        }
    }

    let (_, best_epoch, network) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        network,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkernel::layer::{Activation, DenseLayer};
    use crate::nnkernel::optim::OptimizerKind;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as f64;
            let centre = if label == 1.0 { 1.5 } else { -1.5 };
            x.push(centre + rng.random_range(-0.7..0.7));
            x.push(-centre + rng.random_range(-0.7..0.7));
            y.push(label);
        }
        TrainingData::new(Tensor::matrix(n, 2, x).unwrap(), y).unwrap()
    }

    fn small_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(vec![
            DenseLayer::he_uniform(2, 8, Activation::Relu, &mut rng),
            DenseLayer::he_uniform(8, 1, Activation::Sigmoid, &mut rng),
        ])
        .unwrap()
    }

    #[test]
    fn separable_set_is_learned_within_40_epochs() {
        let train = separable(60, 1);
        let val = separable(20, 2);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01).unwrap();
        let schedule = TrainSchedule {
            epochs: 40,
            batch_size: 10,
            patience: 40,
        };
        let out = fit(small_net(5), &train, &val, schedule, &mut opt, 7).unwrap();
        let (_, acc) = evaluate(&out.network, &train).unwrap();
        assert_eq!(acc, 1.0);
        assert!(out.history.len() <= 40);
    }

    #[test]
    fn worsening_validation_stops_after_second_epoch() {
        let train = separable(40, 3);
        // Same inputs, flipped labels: every step that helps train hurts val.
        let mut val = train.clone();
        for y in &mut val.y {
            *y = 1.0 - *y;
        }
        let layer = DenseLayer::zeros(2, 1, Activation::Sigmoid);
        let net = Network::new(vec![layer]).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let schedule = TrainSchedule {
            epochs: 10,
            batch_size: 40,
            patience: 1,
        };
        let out = fit(net.clone(), &train, &val, schedule, &mut opt, 0).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history[1].val_loss > out.history[0].val_loss);
        assert_eq!(out.best_epoch, 1);
        assert!(out.stopped_early);

        // Replaying a single epoch reproduces the returned weights.
        let mut opt1 = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let one = TrainSchedule { epochs: 1, ..schedule };
        let first = fit(net, &train, &val, one, &mut opt1, 0).unwrap();
        assert_eq!(first.network, out.network);
    }

    #[test]
    fn zero_epochs_rejected() {
        let d = separable(10, 0);
        let mut opt = OptimizerState::with_default_rate(OptimizerKind::Adam);
        let s = TrainSchedule {
            epochs: 0,
            ..TrainSchedule::default()
        };
        assert!(matches!(
            fit(small_net(0), &d, &d, s, &mut opt, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn oversized_batch_rejected() {
        let d = separable(6, 0);
        let mut opt = OptimizerState::with_default_rate(OptimizerKind::Adam);
        let s = TrainSchedule::default();
        assert!(fit(small_net(0), &d, &d, s, &mut opt, 0).is_err());
    }

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let train = separable(50, 11);
        let val = separable(20, 12);
        let run = || {
            let mut opt = OptimizerState::with_default_rate(OptimizerKind::Adam);
            fit(small_net(4), &train, &val, TrainSchedule::default(), &mut opt, 99)
                .unwrap()
                .network
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_reports_epoch() {
        let train = separable(20, 1);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 1e308).unwrap();
        let s = TrainSchedule {
            epochs: 5,
            batch_size: 20,
            patience: 5,
        };
        let err = fit(small_net(1), &train, &train, s, &mut opt, 0).unwrap_err();
        assert!(matches!(err, Error::Training { .. }), "{err:?}");
    }
}
