//! Fully connected ReLU network with a softmax output.
//!
//! Samples are rows: a batch is `n × in`, each layer computes
//! `Z = A W + 1 bᵀ` with `W` stored `in × out`.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Per-dimension z-score computed on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let mu = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            std.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            c.apply(|v| *v = (*v - mu) / sd);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub dropout_rate: f64,
    /// Basis the input features must come from; empty until trained.
    pub basis_id: String,
    pub class_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
}

/// Gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Input dimension, hidden sizes, class count.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Raw logits for already-standardized inputs, no dropout.
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &a * &l.w;
            add_bias(&mut z, &l.b);
            if i < last {
                z.apply(relu);
            }
            a = z;
        }
        a
    }

    /// Class probabilities for raw (unstandardized) feature rows.
    pub fn probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xs = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.clone(),
        };
        softmax_rows(&self.logits(&xs))
    }

    /// Mean cross-entropy and its gradient over a batch, dropout disabled.
    pub fn loss_and_gradients(&self, x: &DMatrix<f64>, labels: &[usize]) -> (f64, Gradients) {
        let pass = self.forward_train(x, None);
        self.backward(&pass, labels)
    }

    pub(crate) fn forward_train(&self, x: &DMatrix<f64>, dropout: Option<(&mut ChaCha8Rng, f64)>) -> ForwardPass {
        let last = self.layers.len() - 1;
        let mut acts = vec![x.clone()];
        let mut masks = Vec::with_capacity(last);
        let mut dropout = dropout;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts.last().unwrap() * &l.w;
            add_bias(&mut z, &l.b);
            if i < last {
                z.apply(relu);
                // inverted dropout, only where the next layer is also hidden
                let mask = match dropout.as_mut() {
                    Some((rng, p)) if *p > 0.0 && i + 1 < last => {
                        let keep = 1.0 - *p;
                        let m = DMatrix::from_fn(z.nrows(), z.ncols(), |_, _| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        z.component_mul_assign(&m);
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
            }
            acts.push(z);
        }
        ForwardPass { acts, masks }
    }

    pub(crate) fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> (f64, Gradients) {
        let logits = pass.acts.last().unwrap();
        let probs = softmax_rows(logits);
        let loss = cross_entropy(logits, labels);
        let mut delta = output_gradient_from_probs(&probs, labels);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a_prev = &pass.acts[i];
            let dw = a_prev.transpose() * &delta;
            let db = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Layer { w: dw, b: db });
            if i > 0 {
                let mut da = &delta * self.layers[i].w.transpose();
                // a_prev = mask ⊙ relu(z); relu' is 1 exactly where a_prev > 0
                if let Some(mask) = &pass.masks[i - 1] {
                    da.component_mul_assign(mask);
                }
                da.zip_apply(a_prev, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = da;
            }
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }
}

pub(crate) struct ForwardPass {
    pub acts: Vec<DMatrix<f64>>,
    pub masks: Vec<Option<DMatrix<f64>>>,
}

/// In-place ReLU that keeps NaN visible.
fn relu(v: &mut f64) {
    if *v < 0.0 {
        *v = 0.0;
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    let row = RowDVector::from_iterator(b.len(), b.iter().copied());
    for mut r in z.row_iter_mut() {
        r += &row;
    }
}

pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut r in p.row_iter_mut() {
        let mx = r.max();
        r.apply(|v| *v = (*v - mx).exp());
        let s = r.sum();
        r /= s;
    }
    p
}

/// Mean softmax cross-entropy, computed from logits with log-sum-exp.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = logits.nrows();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = logits.row(i);
            let mx = r.max();
            let lse = mx + r.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            lse - r[y]
        })
        .sum::<f64>()
        / n as f64
}

/// `∂ loss / ∂ logits = (p − onehot) / n` for mean softmax cross-entropy.
pub fn output_gradient(logits: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    output_gradient_from_probs(&softmax_rows(logits), labels)
}

fn output_gradient_from_probs(probs: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let n = probs.nrows() as f64;
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        g[(i, y)] -= 1.0;
    }
    g / n
}

/// He-initialized network: `N(0, 2/fan_in)` weights, zero biases.
pub fn init_mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<MlpModel> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!(
            "a classifier needs at least 2 classes, got {classes}"
        )));
    }
    if input_dim == 0 || hidden.contains(&0) {
        return Err(Error::InvalidInput("layer sizes must be positive".into()));
    }
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let mut m = DMatrix::zeros(fan_in, fan_out);
            for r in 0..fan_in {
                for c in 0..fan_out {
                    m[(r, c)] = normal.sample(&mut rng);
                }
            }
            Layer {
                w: m,
                b: DVector::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpModel {
        layers,
        seed,
        dropout_rate: 0.0,
        basis_id: String::new(),
        class_names: (0..classes).map(|c| format!("class{c}")).collect(),
        standardizer: None,
    })
}
