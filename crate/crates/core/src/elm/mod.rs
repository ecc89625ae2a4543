//! Per-instance Extreme Learning Machine embedding.
//!
//! Each shape's canonical sampling coordinates `X̄` are augmented with a
//! constant column `σ(X̄)`, pushed through a fixed random basis `W` and a
//! positively homogeneous activation, and the output weights `β` are fitted to
//! the distance values by ridge regression with penalty `Var(X̄)`:
//!
//! ```text
//! H  = f([X̄ | σ 1] Wᵀ)                   (m × k)
//! β* = (Var(X̄) I + HᵀH)⁻¹ Hᵀ phi
//! ```
//!
//! Scaling the shape by `s > 0` scales `X̄`, `σ`, `H` and `phi` by `s` and the
//! penalty by `s²`, so `β*` does not change.

mod feature_file;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::canonical::CanonicalInput;
use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::hash::{content_digest, to_hex};

pub use feature_file::{read_features, write_features, FeatureSet};

/// Ridge residual tolerance relative to `‖Hᵀ phi‖`.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-8;

/// Hidden-layer activation. Both variants satisfy `f(s x) = s f(x)` for `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }
}

/// Random hidden weights shared by every instance of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmBasis {
    /// `k × (d + 2)` with orthonormal columns.
    w: DMatrix<f64>,
    seed: u64,
    basis_id: String,
    pub activation: Activation,
}

impl ElmBasis {
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    /// Columns of `X̃` this basis expects.
    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

/// Basis for the 3D pipeline: `k × 5`.
pub fn make_shared_basis(k: usize, seed: u64) -> Result<ElmBasis> {
    make_basis(k, 5, seed)
}

/// Gaussian `k × input_dim` matrix whose columns are orthonormalized by QR.
pub fn make_basis(k: usize, input_dim: usize, seed: u64) -> Result<ElmBasis> {
    if k < input_dim {
        return Err(Error::InvalidInput(format!(
            "need at least {input_dim} hidden nodes to orthonormalize the basis, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fill row by row so the draw order does not depend on storage layout
    let mut g = DMatrix::zeros(k, input_dim);
    for r in 0..k {
        for c in 0..input_dim {
            g[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let w = g.qr().q();
    Ok(basis_from_weights(w, seed))
}

/// Wraps an explicit weight matrix (used by tests and the `k = 1` closed form).
pub fn basis_from_weights(w: DMatrix<f64>, seed: u64) -> ElmBasis {
    let digest = content_digest(
        (w.nrows() as u64)
            .to_le_bytes()
            .into_iter()
            .chain((w.ncols() as u64).to_le_bytes())
            .chain(w.iter().flat_map(|v| v.to_le_bytes())),
    );
    ElmBasis {
        w,
        seed,
        basis_id: to_hex(&digest[..8]),
        activation: Activation::Relu,
    }
}

/// `X̃ = [X̄ | σ(X̄) 1]` together with the statistics that drive scale invariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedInput {
    pub xtilde: DMatrix<f64>,
    pub sigma: f64,
    /// Population variance over every element of `X̄`; also the ridge penalty.
    pub variance: f64,
}

impl AugmentedInput {
    pub fn rows(&self) -> usize {
        self.xtilde.nrows()
    }
}

pub fn augment_input(input: &CanonicalInput) -> Result<AugmentedInput> {
    let xbar = &input.xbar;
    let (m, d) = xbar.shape();
    if m < 2 {
        return Err(Error::InvalidInput("need at least two sampling rows".into()));
    }
    if xbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("canonical input is not finite".into()));
    }
    // Welford over all elements
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xbar.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let variance = m2 / (m * d) as f64;
    if !(variance > 0.0) {
        return Err(Error::Degenerate(
            "canonical input has zero variance".into(),
        ));
    }
    let sigma = variance.sqrt();
    let mut xtilde = DMatrix::from_element(m, d + 1, sigma);
    xtilde.view_mut((0, 0), (m, d)).copy_from(xbar);
    Ok(AugmentedInput {
        xtilde,
        sigma,
        variance,
    })
}

/// A shape's compact descriptor: the fitted output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFeature {
    pub beta: Vec<f64>,
    pub basis_id: String,
    pub label: Option<usize>,
    pub instance_id: String,
    /// Index of the surface subset this feature was computed from (0 without augmentation).
    pub subset: usize,
}

impl ShapeFeature {
    pub fn ensure_basis(&self, basis_id: &str) -> Result<()> {
        if self.basis_id != basis_id {
            return Err(Error::BasisMismatch {
                expected: basis_id.to_string(),
                found: self.basis_id.clone(),
            });
        }
        Ok(())
    }
}

/// Hidden activations `H = f(X̃ Wᵀ)`, `m × k`.
pub fn hidden_activations(aug: &AugmentedInput, basis: &ElmBasis) -> Result<DMatrix<f64>> {
    if aug.xtilde.ncols() != basis.input_dim() {
        return Err(Error::InvalidInput(format!(
            "basis expects {} input columns, augmented input has {}",
            basis.input_dim(),
            aug.xtilde.ncols()
        )));
    }
    let act = basis.activation;
    let h = (&aug.xtilde * basis.weights().transpose()).map(|v| act.apply(v));
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("hidden activations are not finite".into()));
    }
    Ok(h)
}

/// `‖(Var I + HᵀH) β − Hᵀ phi‖ / ‖Hᵀ phi‖` (0 when the right-hand side vanishes
/// and the residual is exactly zero).
pub fn ridge_residual(aug: &AugmentedInput, phi: &[f64], basis: &ElmBasis, beta: &[f64]) -> Result<f64> {
    let h = hidden_activations(aug, basis)?;
    let (gram, rhs) = normal_equations(&h, phi, aug.variance);
    let b = DVector::from_column_slice(beta);
    Ok(relative_residual(&gram, &b, &rhs))
}

fn normal_equations(h: &DMatrix<f64>, phi: &[f64], ridge: f64) -> (DMatrix<f64>, DVector<f64>) {
    let ht = h.transpose();
    let mut gram = &ht * h;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let rhs = h.tr_mul(&DVector::from_column_slice(phi));
    (gram, rhs)
}

fn relative_residual(gram: &DMatrix<f64>, beta: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    let r = (gram * beta - rhs).norm();
    let scale = rhs.norm();
    if scale == 0.0 {
        if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        r / scale
    }
}

/// Fits `β*` for one instance.
pub fn embed(aug: &AugmentedInput, field: &DistanceField, basis: &ElmBasis) -> Result<ShapeFeature> {
    embed_values(aug, &field.phi, basis)
}

/// [`embed`] on a raw target vector.
pub fn embed_values(aug: &AugmentedInput, phi: &[f64], basis: &ElmBasis) -> Result<ShapeFeature> {
    if phi.len() != aug.rows() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} input rows",
            phi.len(),
            aug.rows()
        )));
    }
    let h = hidden_activations(aug, basis)?;
    let (gram, rhs) = normal_equations(&h, phi, aug.variance);
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
    let mut beta = chol.solve(&rhs);
    let mut res = relative_residual(&gram, &beta, &rhs);
    if res > RIDGE_RESIDUAL_TOL {
        // one step of iterative refinement
        let correction = chol.solve(&(&rhs - &gram * &beta));
        beta += correction;
        res = relative_residual(&gram, &beta, &rhs);
    }
    if !(res <= RIDGE_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!(
            "ridge residual {res:e} exceeds {RIDGE_RESIDUAL_TOL:e}"
        )));
    }
    Ok(ShapeFeature {
        beta: beta.as_slice().to_vec(),
        basis_id: basis.basis_id().to_string(),
        label: None,
        instance_id: String::new(),
        subset: 0,
    })
}

/// ELM output `H β` on the given inputs.
pub fn reconstruct(aug: &AugmentedInput, basis: &ElmBasis, feature: &ShapeFeature) -> Result<Vec<f64>> {
    feature.ensure_basis(basis.basis_id())?;
    if feature.beta.len() != basis.k() {
        return Err(Error::InvalidInput(format!(
            "feature has {} weights, basis has {} nodes",
            feature.beta.len(),
            basis.k()
        )));
    }
    let h = hidden_activations(aug, basis)?;
    Ok((h * DVector::from_column_slice(&feature.beta)).as_slice().to_vec())
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(m: usize, seed: u64) -> (CanonicalInput, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xbar = DMatrix::from_fn(m, 4, |_, _| rng.random_range(-1.0..1.0));
        let phi = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        (CanonicalInput { xbar }, phi)
    }

    #[test]
    fn basis_is_orthonormal_and_deterministic() {
        let a = make_shared_basis(64, 1).unwrap();
        let b = make_shared_basis(64, 1).unwrap();
        assert_eq!(a, b);
        let wtw = a.weights().tr_mul(a.weights());
        assert!((wtw - DMatrix::<f64>::identity(5, 5)).abs().max() <= 1e-8);
        let c = make_shared_basis(64, 2).unwrap();
        assert!((a.weights() - c.weights()).norm() > 0.1);
        assert_ne!(a.basis_id(), c.basis_id());
        assert!(make_shared_basis(4, 0).is_err());
    }

    #[test]
    fn unit_variance_input() {
        let vals = [1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
        let xbar = DMatrix::from_row_slice(2, 4, &vals);
        let aug = augment_input(&CanonicalInput { xbar }).unwrap();
        assert!((aug.sigma - 1.0).abs() < 1e-15);
        assert!(aug.xtilde.column(4).iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn sigma_is_homogeneous() {
        let (x, _) = random_input(100, 3);
        let a = augment_input(&x).unwrap();
        let s = 3.7;
        let b = augment_input(&CanonicalInput { xbar: &x.xbar * s }).unwrap();
        assert!((b.sigma - s * a.sigma).abs() <= 1e-14 * b.sigma);
        assert!((a.sigma - a.variance.sqrt()).abs() <= 1e-12 * a.sigma);
    }

    #[test]
    fn variance_matches_two_pass() {
        let (x, _) = random_input(500, 4);
        let xs = CanonicalInput { xbar: x.xbar.add_scalar(1e3) };
        let aug = augment_input(&xs).unwrap();
        let n = xs.xbar.len() as f64;
        let mean = xs.xbar.iter().sum::<f64>() / n;
        let var = xs.xbar.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((aug.variance - var).abs() <= 1e-12 * var);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let xbar = DMatrix::from_element(10, 4, 0.25);
        assert!(matches!(
            augment_input(&CanonicalInput { xbar }),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zero_target_gives_zero_beta() {
        let (x, _) = random_input(200, 5);
        let aug = augment_input(&x).unwrap();
        let basis = make_shared_basis(32, 9).unwrap();
        let f = embed_values(&aug, &vec![0.0; 200], &basis).unwrap();
        assert!(f.beta.iter().all(|&b| b == 0.0));
        let zero = ShapeFeature { beta: vec![0.0; 32], ..f };
        assert!(reconstruct(&aug, &basis, &zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_closed_form() {
        let (x, phi) = random_input(300, 6);
        let aug = augment_input(&x).unwrap();
        let w = DMatrix::from_row_slice(1, 5, &[0.3, -0.2, 0.5, 0.1, 0.7]);
        let basis = basis_from_weights(w.clone(), 0);
        let beta = embed_values(&aug, &phi, &basis).unwrap().beta[0];
        let mut hh = 0.0;
        let mut hphi = 0.0;
        for (i, target) in phi.iter().enumerate() {
            let z: f64 = (0..5).map(|j| aug.xtilde[(i, j)] * w[(0, j)]).sum();
            let h = z.max(0.0);
            hh += h * h;
            hphi += h * target;
        }
        let expected = hphi / (aug.variance + hh);
        assert!((beta - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn scale_invariance_of_beta() {
        let (x, phi) = random_input(400, 7);
        let basis = make_shared_basis(48, 3).unwrap();
        let b0 = embed_values(&augment_input(&x).unwrap(), &phi, &basis).unwrap();
        for act in [Activation::Relu, Activation::LeakyRelu(0.01)] {
            let basis = basis.clone().with_activation(act);
            let b0 = embed_values(&augment_input(&x).unwrap(), &phi, &basis).unwrap();
            let s = 3.7;
            let xs = CanonicalInput { xbar: &x.xbar * s };
            let phis: Vec<f64> = phi.iter().map(|v| v * s).collect();
            let b1 = embed_values(&augment_input(&xs).unwrap(), &phis, &basis).unwrap();
            let scale = b0.beta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (u, v) in b0.beta.iter().zip(&b1.beta) {
                assert!((u - v).abs() <= 1e-9 * scale);
            }
        }
        assert_eq!(b0.beta.len(), 48);
    }

    #[test]
    fn fit_beats_constant_predictor() {
        let (x, _) = random_input(500, 8);
        let phi: Vec<f64> = (0..500)
            .map(|i| (x.xbar[(i, 0)].powi(2) + x.xbar[(i, 1)].powi(2)).sqrt())
            .collect();
        let aug = augment_input(&x).unwrap();
        let basis = make_shared_basis(64, 1).unwrap();
        let f = embed_values(&aug, &phi, &basis).unwrap();
        let fit = reconstruct(&aug, &basis, &f).unwrap();
        let mean = phi.iter().sum::<f64>() / 500.0;
        assert!(rms(&fit, &phi) <= rms(&vec![mean; 500], &phi));
        let res = ridge_residual(&aug, &phi, &basis, &f.beta).unwrap();
        assert!(res <= RIDGE_RESIDUAL_TOL);
    }

    #[test]
    fn reconstruct_rejects_foreign_basis() {
        let (x, phi) = random_input(100, 9);
        let aug = augment_input(&x).unwrap();
        let a = make_shared_basis(16, 1).unwrap();
        let b = make_shared_basis(16, 2).unwrap();
        let f = embed_values(&aug, &phi, &a).unwrap();
        assert!(matches!(
            reconstruct(&aug, &b, &f),
            Err(Error::BasisMismatch { .. })
        ));
    }
}
