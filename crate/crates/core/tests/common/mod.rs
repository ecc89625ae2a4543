//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use canonshape::classifier::MlpModel;
use canonshape::geometry::Point3;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(nm) nearest distances.
pub fn brute_force_field(cloud: &[Point3], sampling: &[Point3]) -> Vec<f64> {
    sampling
        .iter()
        .map(|x| {
            cloud
                .iter()
                .map(|p| ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2) + (x[2] - p[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn random_points(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            ]
        })
        .collect()
}

/// Population variance of every entry, two-pass.
pub fn population_variance(m: &DMatrix<f64>) -> f64 {
    let n = m.len() as f64;
    let mean = m.iter().sum::<f64>() / n;
    m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `[X̄ | sqrt(Var X̄) 1]`.
pub fn augmented(xbar: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let var = population_variance(xbar);
    let (m, d) = xbar.shape();
    let mut x = DMatrix::from_element(m, d + 1, var.sqrt());
    x.view_mut((0, 0), (m, d)).copy_from(xbar);
    (x, var)
}

/// ReLU hidden layer written out elementwise.
pub fn hidden(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), w.nrows(), |i, j| {
        let z: f64 = (0..x.ncols()).map(|c| x[(i, c)] * w[(j, c)]).sum();
        z.max(0.0)
    })
}

/// The scalar ridge solution for a single hidden node.
pub fn single_node_beta(h: &[f64], phi: &[f64], ridge: f64) -> f64 {
    let num: f64 = h.iter().zip(phi).map(|(a, b)| a * b).sum();
    let den: f64 = ridge + h.iter().map(|a| a * a).sum::<f64>();
    num / den
}

/// `‖(λ I + HᵀH) β − Hᵀ φ‖ / ‖Hᵀ φ‖` from scratch.
pub fn ridge_residual(h: &DMatrix<f64>, phi: &[f64], ridge: f64, beta: &[f64]) -> f64 {
    let (m, k) = h.shape();
    let mut r = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        rhs[a] = (0..m).map(|i| h[(i, a)] * phi[i]).sum();
        let mut s = ridge * beta[a];
        for b in 0..k {
            let g: f64 = (0..m).map(|i| h[(i, a)] * h[(i, b)]).sum();
            s += g * beta[b];
        }
        r[a] = s - rhs[a];
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(&r) / norm(&rhs)
}

/// Loss recomputed without any of the library's matrix helpers.
pub fn reference_loss(model: &MlpModel, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x.row(i).iter().copied().collect();
        for (li, l) in model.layers.iter().enumerate() {
            let mut z: Vec<f64> = (0..l.w.ncols())
                .map(|c| l.b[c] + (0..a.len()).map(|r| a[r] * l.w[(r, c)]).sum::<f64>())
                .collect();
            if li + 1 < model.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + a.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - a[y];
    }
    total / labels.len() as f64
}

/// Largest relative disagreement between analytic gradients and central
/// differences of [`reference_loss`], over every parameter.
pub fn gradient_check(model: &MlpModel, x: &DMatrix<f64>, labels: &[usize], h: f64) -> f64 {
    let (_, grads) = model.loss_and_gradients(x, labels);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for li in 0..model.layers.len() {
        for idx in 0..model.layers[li].w.len() {
            let w0 = model.layers[li].w[idx];
            probe.layers[li].w[idx] = w0 + h;
            let up = reference_loss(&probe, x, labels);
            probe.layers[li].w[idx] = w0 - h;
            let down = reference_loss(&probe, x, labels);
            probe.layers[li].w[idx] = w0;
            compare(grads.layers[li].w[idx], (up - down) / (2.0 * h));
        }
        for idx in 0..model.layers[li].b.len() {
            let b0 = model.layers[li].b[idx];
            probe.layers[li].b[idx] = b0 + h;
            let up = reference_loss(&probe, x, labels);
            probe.layers[li].b[idx] = b0 - h;
            let down = reference_loss(&probe, x, labels);
            probe.layers[li].b[idx] = b0;
            compare(grads.layers[li].b[idx], (up - down) / (2.0 * h));
        }
    }
    worst
}

/// Uniform inputs in `[-1, 1)`, uniform labels, and small random biases so
/// that no pre-activation sits exactly on the ReLU kink.
pub fn gradient_problem(model: &mut MlpModel, rows: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut model.layers {
        l.b.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let x = DMatrix::from_fn(rows, model.input_dim(), |_, _| rng.random_range(-1.0..1.0));
    let labels = (0..rows).map(|_| rng.random_range(0..model.classes())).collect();
    (x, labels)
}

pub fn unit(v: &DVector<f64>) -> DVector<f64> {
    v / v.norm()
}
