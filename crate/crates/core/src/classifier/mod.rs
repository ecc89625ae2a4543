//! Shallow softmax classifier over shape features.

mod checkpoint;
mod mlp;

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::elm::ShapeFeature;
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::{
    cross_entropy, init_mlp, output_gradient, softmax_rows, Gradients, Layer, MlpModel,
    Standardizer, DEFAULT_HIDDEN,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Momentum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Fraction of training rows held out for validation accuracy.
    pub validation_split: f64,
    pub standardize: bool,
    /// Learning rate is multiplied by `lr_decay` after `plateau_patience`
    /// epochs without a relative loss improvement of `plateau_tolerance`.
    pub lr_decay: f64,
    pub plateau_patience: usize,
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            optimizer: Optimizer::Momentum(0.9),
            dropout_rate: 0.0,
            seed: 0,
            validation_split: 0.0,
            standardize: true,
            lr_decay: 0.5,
            plateau_patience: 10,
            plateau_tolerance: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout rate must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::Config("validation split must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub test_accuracy: Option<f64>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.loss).unwrap_or(f64::NAN)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,train_acc,val_acc")?;
        for e in &self.epochs {
            let val = e.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{:e},{},{}", e.epoch, e.loss, e.train_accuracy, val)?;
        }
        Ok(())
    }
}

/// All features must share one basis; returns it.
pub fn common_basis<'a>(features: impl IntoIterator<Item = &'a ShapeFeature>) -> Result<String> {
    let mut it = features.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidInput("no features".into()))?;
    for f in it {
        f.ensure_basis(&first.basis_id)?;
    }
    Ok(first.basis_id.clone())
}

pub fn feature_matrix(features: &[&ShapeFeature]) -> DMatrix<f64> {
    let k = features[0].beta.len();
    DMatrix::from_fn(features.len(), k, |i, j| features[i].beta[j])
}

fn labels_of(features: &[&ShapeFeature]) -> Result<Vec<usize>> {
    features
        .iter()
        .map(|f| {
            f.label.ok_or_else(|| {
                Error::InvalidInput(format!("feature {} has no label", f.instance_id))
            })
        })
        .collect()
}

fn accuracy_of(probs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(probs.row(*i).iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mini-batch training. Deterministic for a given `(model, features, config)`.
pub fn train(model: MlpModel, features: &[ShapeFeature], config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    let basis_id = common_basis(features)?;
    if !model.basis_id.is_empty() && model.basis_id != basis_id {
        return Err(Error::BasisMismatch {
            expected: model.basis_id.clone(),
            found: basis_id,
        });
    }
    let refs: Vec<&ShapeFeature> = features.iter().collect();
    let labels = labels_of(&refs)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {} classes",
            model.classes()
        )));
    }
    if refs[0].beta.len() != model.input_dim() {
        return Err(Error::InvalidInput(format!(
            "features have {} dimensions, model expects {}",
            refs[0].beta.len(),
            model.input_dim()
        )));
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((refs.len() as f64) * config.validation_split).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    if train_idx.is_empty() {
        return Err(Error::InvalidInput("validation split leaves no training rows".into()));
    }

    let x_all = feature_matrix(&refs);
    let mut model = model;
    model.basis_id = basis_id;
    model.dropout_rate = config.dropout_rate;
    model.standardizer = if config.standardize {
        let train_rows = x_all.select_rows(train_idx.iter());
        Some(Standardizer::fit(&train_rows))
    } else {
        None
    };
    let x_std = match &model.standardizer {
        Some(s) => s.apply(&x_all),
        None => x_all,
    };
    let x_train = x_std.select_rows(train_idx.iter());
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let x_val = x_std.select_rows(val_idx.iter());
    let y_val: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut velocity: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: nalgebra::DVector::zeros(l.b.len()),
        })
        .collect();
    let mut lr = config.learning_rate;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut report = TrainReport::default();
    let mut perm: Vec<usize> = (0..x_train.nrows()).collect();

    for epoch in 0..config.epochs {
        perm.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in perm.chunks(config.batch_size) {
            let xb = x_train.select_rows(chunk.iter());
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let pass = model.forward_train(&xb, Some((&mut rng, config.dropout_rate)));
            let (loss, grads) = model.backward(&pass, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            let logits = pass.acts.last().unwrap();
            hits += yb
                .iter()
                .enumerate()
                .filter(|(i, &y)| argmax(logits.row(*i).iter().copied()) == y)
                .count();
            apply_update(&mut model, &mut velocity, &grads, lr, config.optimizer);
        }
        let loss = loss_sum / x_train.nrows() as f64;
        let val_accuracy = if y_val.is_empty() {
            None
        } else {
            Some(accuracy_of(&softmax_rows(&model.logits(&x_val)), &y_val))
        };
        report.epochs.push(EpochStats {
            epoch,
            loss,
            train_accuracy: hits as f64 / x_train.nrows() as f64,
            val_accuracy,
            learning_rate: lr,
        });
        if loss < best_loss * (1.0 - config.plateau_tolerance) {
            best_loss = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr *= config.lr_decay;
                stale = 0;
                log::debug!("epoch {epoch}: loss plateau, learning rate now {lr:e}");
            }
        }
    }
    let n = report.epochs.len();
    let window = (n / 10).max(1);
    let head: f64 = report.epochs[..window].iter().map(|e| e.loss).sum::<f64>() / window as f64;
    let tail: f64 = report.epochs[n - window..].iter().map(|e| e.loss).sum::<f64>() / window as f64;
    if tail > head {
        log::warn!("training loss rose on average: first epochs {head:e}, last epochs {tail:e}");
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, report))
}

fn apply_update(model: &mut MlpModel, velocity: &mut [Layer], grads: &Gradients, lr: f64, opt: Optimizer) {
    for ((layer, vel), g) in model.layers.iter_mut().zip(velocity.iter_mut()).zip(&grads.layers) {
        match opt {
            Optimizer::Sgd => {
                layer.w.zip_apply(&g.w, |p, d| *p -= lr * d);
                layer.b.zip_apply(&g.b, |p, d| *p -= lr * d);
            }
            Optimizer::Momentum(mu) => {
                vel.w.zip_apply(&g.w, |v, d| *v = mu * *v - lr * d);
                vel.b.zip_apply(&g.b, |v, d| *v = mu * *v - lr * d);
                layer.w += &vel.w;
                layer.b += &vel.b;
            }
        }
    }
}

fn check_model_basis(model: &MlpModel, feature: &ShapeFeature) -> Result<()> {
    if model.basis_id.is_empty() {
        return Ok(());
    }
    feature.ensure_basis(&model.basis_id)
}

/// Class probabilities for one feature.
pub fn predict(model: &MlpModel, feature: &ShapeFeature) -> Result<Vec<f64>> {
    Ok(predict_batch(model, &[feature])?.remove(0))
}

pub fn predict_batch(model: &MlpModel, features: &[&ShapeFeature]) -> Result<Vec<Vec<f64>>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    for f in features {
        check_model_basis(model, f)?;
        if f.beta.len() != model.input_dim() {
            return Err(Error::InvalidInput(format!(
                "feature {} has {} dimensions, model expects {}",
                f.instance_id,
                f.beta.len(),
                model.input_dim()
            )));
        }
    }
    let p = model.probabilities(&feature_matrix(features));
    Ok(p.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Averages the class probabilities of several features of one instance and
/// returns the most probable class (lowest index on ties).
pub fn vote_predict(model: &MlpModel, features: &[&ShapeFeature]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::InvalidInput("vote needs at least one feature".into()));
    }
    common_basis(features.iter().copied())?;
    let probs = predict_batch(model, features)?;
    Ok(vote(&probs))
}

/// Argmax of the mean probability vector.
pub fn vote(probs: &[Vec<f64>]) -> usize {
    let c = probs[0].len();
    let mean: Vec<f64> = (0..c)
        .map(|j| probs.iter().map(|p| p[j]).sum::<f64>() / probs.len() as f64)
        .collect();
    argmax(mean)
}

/// Accuracy with one vote per instance id (features grouped by id).
pub fn vote_accuracy(model: &MlpModel, features: &[ShapeFeature]) -> Result<f64> {
    let set = group_by_instance(features);
    let mut hits = 0usize;
    for group in &set {
        let label = group[0].label.ok_or_else(|| {
            Error::InvalidInput(format!("feature {} has no label", group[0].instance_id))
        })?;
        if vote_predict(model, group)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

fn group_by_instance(features: &[ShapeFeature]) -> Vec<Vec<&ShapeFeature>> {
    let mut out: Vec<Vec<&ShapeFeature>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for f in features {
        let slot = *index.entry(f.instance_id.as_str()).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[slot].push(f);
    }
    out
}
