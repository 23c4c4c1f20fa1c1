use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::model::{step_sampler_seed, Model};
use super::{derive_seed, CpnetError};
use crate::nn::{update_running_stats, Adam, AdamConfig, Matrix, Session, Tape};
use crate::pcio::{augment, rng_from_seed, AugmentConfig, Point3, PointCloud};

pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub overall_acc: f64,
    pub mean_class_acc: f64,
}

/// Metrics log as CSV with header `epoch,loss,overall_acc,mean_class_acc`.
pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,overall_acc,mean_class_acc\n");
    for m in log {
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.loss, m.overall_acc, m.mean_class_acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_acc: f64,
    /// Mean of per-class recalls over classes present in the labels.
    pub mean_class_acc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy figures from labels and predictions.
pub fn score(labels: &[usize], predictions: &[usize], classes: usize) -> EvalReport {
    assert_eq!(labels.len(), predictions.len());
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    EvalReport {
        overall_acc: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        mean_class_acc: if recalls.is_empty() { 0.0 } else { recalls.iter().sum::<f64>() / recalls.len() as f64 },
        confusion,
    }
}

/// Row-wise argmax, ties to the smaller class index.
pub fn predictions(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn labels_of(clouds: &[PointCloud]) -> Result<Vec<usize>, CpnetError> {
    clouds
        .iter()
        .map(|c| c.label.ok_or_else(|| CpnetError::ConfigInvalid("cloud without a label".into())))
        .collect()
}

/// Evaluation-mode logits for every cloud, in batches. `sampler_seed`
/// matters only for the random sampler; batch `i` uses a seed derived from
/// it and `i`.
pub fn predict_logits(model: &Model, clouds: &[PointCloud], sampler_seed: u64) -> Result<Matrix, CpnetError> {
    let classes = model.config().classes;
    let mut data = Vec::with_capacity(clouds.len() * classes);
    for (i, chunk) in clouds.chunks(EVAL_BATCH).enumerate() {
        let batch: Vec<&[Point3]> = chunk.iter().map(|c| c.points.as_slice()).collect();
        let logits = model.logits(&batch, derive_seed(sampler_seed, &[i as u64]))?;
        data.extend_from_slice(logits.data());
    }
    Ok(Matrix::from_vec(clouds.len(), classes, data))
}

pub fn evaluate(model: &Model, clouds: &[PointCloud], sampler_seed: u64) -> Result<EvalReport, CpnetError> {
    let labels = labels_of(clouds)?;
    let logits = predict_logits(model, clouds, sampler_seed)?;
    Ok(score(&labels, &predictions(&logits), model.config().classes))
}

/// Mean softmax cross-entropy over `clouds` in training mode without updating
/// anything: the loss the first optimisation step would see.
pub fn initial_loss(model: &Model, clouds: &[PointCloud], seed: u64) -> Result<f64, CpnetError> {
    let labels = labels_of(clouds)?;
    let mut total = 0.0;
    for (i, chunk) in clouds.chunks(EVAL_BATCH).enumerate() {
        let tape = Tape::new();
        let mut s = Session::new(&tape, model.params(), true, derive_seed(seed, &[i as u64]));
        let batch: Vec<&[Point3]> = chunk.iter().map(|c| c.points.as_slice()).collect();
        let out = model.forward(&mut s, &batch, seed)?;
        let start = i * EVAL_BATCH;
        let loss = out.logits.softmax_cross_entropy(&labels[start..start + chunk.len()]);
        total += loss.scalar() * chunk.len() as f64;
    }
    Ok(total / clouds.len() as f64)
}

pub struct TrainOutcome {
    pub optimizer: Adam,
    pub log: Vec<EpochMetrics>,
    pub epochs: usize,
}

/// Mini-batch training with Adam. Every source of randomness (shuffling,
/// augmentation, dropout, random sampling) is derived from `cfg.seed`, so
/// two runs with the same inputs produce identical parameters and logs.
/// Test metrics are recorded after each epoch.
pub fn train(
    model: &mut Model,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, CpnetError> {
    let labels = labels_of(train_set)?;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        decay_steps: cfg.decay_steps.unwrap_or((total_steps / 2).max(1)),
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, model.params());
    let aug = AugmentConfig::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = adam.step;
            let clouds: Vec<PointCloud> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train_set[i], &aug, derive_seed(cfg.seed, &[2, epoch as u64, i as u64]))
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let batch: Vec<&[Point3]> = clouds.iter().map(|c| c.points.as_slice()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let tape = Tape::new();
            let mut s = Session::new(&tape, model.params(), true, derive_seed(cfg.seed, &[3, step]));
            let out = model.forward(&mut s, &batch, step_sampler_seed(cfg.seed, step))?;
            let loss = out.logits.softmax_cross_entropy(&batch_labels);
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(CpnetError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += value * chunk.len() as f64;
            let grads = tape.backward(loss);
            let param_grads = s.param_grads(&grads);
            let stats = s.take_bn_stats();
            drop(s);
            adam.step(model.params_mut(), &param_grads);
            update_running_stats(model.params_mut(), &stats, cfg.bn_momentum);
        }
        let report = evaluate(model, test_set, derive_seed(cfg.seed, &[4, epoch as u64]))?;
        log.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            overall_acc: report.overall_acc,
            mean_class_acc: report.mean_class_acc,
        });
    }
    Ok(TrainOutcome {
        optimizer: adam,
        log,
        epochs: cfg.epochs,
    })
}
