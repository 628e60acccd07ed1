use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::training::{sample_batch, Batch, PairTargets, ToyMlp, TrainConfig, TrainVideo};
use crate::Scalar;

/// Trained network plus its loss record.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub mlp: ToyMlp<T>,
    /// Evaluation loss of the initial network.
    pub initial_loss: f64,
    /// Loss on a fixed set of evaluation batches (no dropout, no
    /// augmentation) after every epoch.
    pub loss_history: Vec<f64>,
    /// Loss of every optimization batch, as seen by the update.
    pub step_losses: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// SGD with momentum on the soft pair loss. All randomness comes from
/// `cfg.seed`, so a run is bit-reproducible.
pub fn train<T: Scalar>(dataset: &[TrainVideo<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InsufficientFrames("empty training set".into()))?;
    let shape = first.frames.frame_shape();
    if let Some(v) = dataset.iter().find(|v| v.frames.frame_shape() != shape) {
        return Err(Error::InputShape {
            expected: shape,
            found: v.frames.frame_shape(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(1);

    let input = 3 * shape.0 * shape.1;
    let mut mlp = ToyMlp::init(input, cfg.hidden, cfg.fc, &mut rng)?.with_frame_shape(shape);

    let eval_cfg = TrainConfig {
        data_augmentation: false,
        ..cfg.clone()
    };
    let eval_batches = (0..dataset.len())
        .map(|_| sample_batch(dataset, &eval_cfg, &mut eval_rng))
        .collect::<Result<Vec<Batch<T>>>>()?;

    let initial_loss = evaluate(&mlp, &eval_batches)?;
    let batches_per_epoch = cfg.batches_per_epoch.unwrap_or(dataset.len());
    let lr = T::of(cfg.learning_rate);
    let momentum = T::of(cfg.momentum);
    let mut params = mlp.flat_params();
    let mut velocity = vec![T::zero(); params.len()];
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * batches_per_epoch);

    for _ in 0..cfg.epochs {
        for _ in 0..batches_per_epoch {
            let step = step_losses.len();
            let batch = sample_batch(dataset, cfg, &mut rng)?;
            let dropout = (cfg.dropout_rate > 0.0).then(|| {
                (0..batch.inputs.len())
                    .map(|_| mlp.dropout_mask(cfg.dropout_rate, &mut rng))
                    .collect::<Vec<_>>()
            });
            let (loss, grad) = mlp.loss_gradient(&batch.inputs, &batch.targets, dropout.as_deref())?;
            let loss = loss.as_f64();
            if !loss.is_finite() || grad.flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            step_losses.push(loss);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad.flat) {
                *v = momentum * *v - lr * *g;
                *p = *p + *v;
            }
            mlp.set_flat_params(&params)?;
        }
        let loss = evaluate(&mlp, &eval_batches)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: step_losses.len(),
                loss,
            });
        }
        loss_history.push(loss);
    }

    Ok(TrainOutcome {
        mlp,
        initial_loss,
        loss_history,
        step_losses,
    })
}

/// Mean soft pair loss of `mlp` over `batches`, summed in batch order.
fn evaluate<T: Scalar>(mlp: &ToyMlp<T>, batches: &[Batch<T>]) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let outputs = b
            .inputs
            .iter()
            .map(|x| mlp.forward(x))
            .collect::<Result<Vec<_>>>()?;
        total += batch_loss(&outputs, &b.targets)?;
    }
    Ok(total / batches.len() as f64)
}

fn batch_loss<T: Scalar>(outputs: &[Vec<T>], targets: &PairTargets<T>) -> Result<f64> {
    Ok(crate::training::soft_pair_loss(outputs, targets)?.as_f64())
}
