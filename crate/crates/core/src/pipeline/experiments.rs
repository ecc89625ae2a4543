//! Invariance suite, principal-axis stability and planar reconstruction.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::extract::{embed_cloud, embed_raw};
use super::report::{mean_std, relative_deviation, Check, ExperimentReport};
use super::shapes::{reference_contour, reference_shape, scan_placement};
use crate::canonical::{assemble_data_matrix, canonical_input_from_coords, canonical_projection, DataMatrix};
use crate::distance_field::{compute_distance_field, generate_sampling_points};
use crate::elm::{augment_input, embed_values, hidden_activations, make_basis, make_shared_basis, reconstruct, rms, AugmentedInput};
use crate::error::{Error, Result};
use crate::geometry::{normalize, random_rotation, sample_surface, Mesh, PointCloud};
use crate::hash::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceConfig {
    pub n_surface: usize,
    pub m_sampling: usize,
    pub k_nodes: usize,
    pub rotations: usize,
    pub scales: Vec<f64>,
    pub permutations: usize,
    pub translations: usize,
    pub seed: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig {
            n_surface: 2048,
            m_sampling: 4096,
            k_nodes: 256,
            rotations: 100,
            scales: vec![0.1, 0.5, 2.0, 10.0],
            permutations: 10,
            translations: 10,
            seed: 0,
        }
    }
}

pub const ROTATION_BOUND: f64 = 1e-6;
pub const SCALE_BOUND: f64 = 1e-9;
pub const SAMPLING_PERMUTATION_BOUND: f64 = 1e-10;
pub const TRANSLATION_BOUND: f64 = 1e-6;

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Rotation, scale, permutation and origin properties of the full pipeline on
/// a shape (the bundled reference shape when `shape` is `None`).
///
/// Checks: `rotation` (shape and sampling points rotated together),
/// `scale` (both the normalized pipeline on a scaled shape and the raw
/// pipeline on jointly scaled shape and sampling points), `surface_permutation`
/// (must be exactly 0), `sampling_permutation` and `translation`.
pub fn run_invariance_suite(shape: Option<&Mesh>, cfg: &InvarianceConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = ExperimentReport::new("invariance");
    report.set("n_surface", cfg.n_surface);
    report.set("m_sampling", cfg.m_sampling);
    report.set("k_nodes", cfg.k_nodes);
    report.set("seed", cfg.seed);
    let surface_seed = derive_seed(cfg.seed, "surface");
    let sampling_seed = derive_seed(cfg.seed, "sampling");
    let basis_seed = derive_seed(cfg.seed, "basis");
    report.set("surface_seed", surface_seed);
    report.set("sampling_seed", sampling_seed);
    report.set("basis_seed", basis_seed);
    report.set("shape", if shape.is_some() { "user" } else { "bundled reference" });
    report.columns = ["property", "trial", "parameter", "relative_deviation", "gap_warning"]
        .map(String::from)
        .to_vec();

    let owned;
    let mesh = match shape {
        Some(m) => m,
        None => {
            owned = reference_shape();
            &owned
        }
    };
    let cloud = sample_surface(mesh, cfg.n_surface, surface_seed)?;
    let sampling = generate_sampling_points(cfg.m_sampling, sampling_seed)?;
    let basis = make_shared_basis(cfg.k_nodes, basis_seed)?;
    let base = embed_cloud(&cloud, &sampling, &basis)?;
    if base.frame.gap_warning {
        report.notes.push(format!(
            "reference frame has a near-degenerate spectrum (min relative gap {:e}); invariance is not guaranteed",
            base.frame.min_relative_gap()
        ));
    }
    let beta0 = &base.feature.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "trials"));
    let row = |report: &mut ExperimentReport, prop: &str, t: usize, param: String, dev: f64, gap: bool| {
        report.rows.push(vec![prop.into(), t.to_string(), param, format!("{dev:e}"), gap.to_string()]);
        dev
    };

    let mut worst = 0.0f64;
    for t in 0..cfg.rotations {
        let r = random_rotation(&mut rng);
        let e = embed_cloud(&cloud.rotated(&r), &sampling.rotated(&r), &basis)?;
        let dev = relative_deviation(&e.feature.beta, beta0);
        worst = worst.max(row(&mut report, "rotation", t, String::new(), dev, e.frame.gap_warning));
    }
    report.checks.push(Check::at_most("rotation", worst, ROTATION_BOUND));

    let unit = normalize(&cloud);
    let raw0 = embed_raw(&unit, &sampling, &basis)?;
    let mut worst = 0.0f64;
    for (t, &s) in cfg.scales.iter().enumerate() {
        let e = embed_cloud(&cloud.scaled(s), &sampling, &basis)?;
        let dev = relative_deviation(&e.feature.beta, beta0);
        worst = worst.max(row(&mut report, "scale_normalized", t, s.to_string(), dev, e.frame.gap_warning));
        let e = embed_raw(&unit.scaled(s), &sampling.scaled(s), &basis)?;
        let dev = relative_deviation(&e.feature.beta, &raw0.feature.beta);
        worst = worst.max(row(&mut report, "scale_joint", t, s.to_string(), dev, e.frame.gap_warning));
    }
    report.checks.push(Check::at_most("scale", worst, SCALE_BOUND));

    let (mut worst_surface, mut worst_sampling) = (0.0f64, 0.0f64);
    for t in 0..cfg.permutations {
        let p = random_permutation(cloud.len(), &mut rng);
        let e = embed_cloud(&cloud.permuted(&p), &sampling, &basis)?;
        let dev = relative_deviation(&e.feature.beta, beta0);
        worst_surface = worst_surface.max(row(&mut report, "surface_permutation", t, String::new(), dev, e.frame.gap_warning));
        let p = random_permutation(sampling.len(), &mut rng);
        let e = embed_cloud(&cloud, &sampling.permuted(&p), &basis)?;
        let dev = relative_deviation(&e.feature.beta, beta0);
        worst_sampling = worst_sampling.max(row(&mut report, "sampling_permutation", t, String::new(), dev, e.frame.gap_warning));
    }
    report.checks.push(Check::at_most("surface_permutation", worst_surface, 0.0));
    report.checks.push(Check::at_most("sampling_permutation", worst_sampling, SAMPLING_PERMUTATION_BOUND));

    let mut worst = 0.0f64;
    for t in 0..cfg.translations {
        let shift = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ];
        let e = embed_cloud(&cloud.translated(&shift), &sampling, &basis)?;
        let dev = relative_deviation(&e.feature.beta, beta0);
        worst = worst.max(row(&mut report, "translation", t, format!("{shift:?}").replace(',', ";"), dev, e.frame.gap_warning));
    }
    report.checks.push(Check::at_most("translation", worst, TRANSLATION_BOUND));

    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Where the axis-stability draws come from.
#[derive(Debug, Clone)]
pub enum ReferenceShape {
    /// Fresh area-weighted surface samples per draw.
    Mesh(Mesh),
    /// Random subsets of a fixed point set per draw.
    Cloud(PointCloud),
}

pub const CANONICAL_SPARSE_MIN: f64 = 0.99;
pub const CANONICAL_DENSE_MIN: f64 = 0.999;
pub const PCA_SPARSE_MAX: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct AxisStabilityConfig {
    pub surface_counts: Vec<usize>,
    pub sampling_counts: Vec<usize>,
    pub draws: usize,
    pub seed: u64,
    pub normalized_diagnostic: bool,
}

impl Default for AxisStabilityConfig {
    fn default() -> Self {
        AxisStabilityConfig {
            surface_counts: vec![10000, 5000, 1000],
            sampling_counts: vec![50000, 10000, 5000],
            draws: 10,
            seed: 0,
            normalized_diagnostic: true,
        }
    }
}

/// Unit eigenvector of the largest eigenvalue of the point covariance.
pub fn pca_first_axis(cloud: &PointCloud) -> DVector<f64> {
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = nalgebra::Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / cloud.len() as f64);
    let i = eig.eigenvalues.imax();
    DVector::from_iterator(3, eig.eigenvectors.column(i).iter().copied())
}

/// Mean and population standard deviation of `|cos|` (or signed cosine) over
/// all unordered pairs.
pub fn pairwise_cosine(axes: &[DVector<f64>], absolute: bool) -> (f64, f64) {
    let mut v = Vec::new();
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            let c = axes[i].dot(&axes[j]) / (axes[i].norm() * axes[j].norm());
            v.push(if absolute { c.abs() } else { c });
        }
    }
    if v.is_empty() {
        return (1.0, 0.0);
    }
    mean_std(&v)
}

fn draw_surface(shape: &ReferenceShape, n: usize, seed: u64) -> Result<PointCloud> {
    match shape {
        ReferenceShape::Mesh(m) => sample_surface(m, n, seed),
        ReferenceShape::Cloud(c) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = rand::seq::index::sample(&mut rng, c.len(), n).into_vec();
            c.subset(&idx)
        }
    }
}

fn canonical_first_axis(cloud: &PointCloud, m: usize, seed: u64) -> Result<(DVector<f64>, bool)> {
    let sampling = generate_sampling_points(m, seed)?;
    let field = compute_distance_field(cloud, &sampling)?;
    let frame = canonical_projection(&assemble_data_matrix(&sampling, &field)?)?;
    Ok((frame.first_axis(), frame.gap_warning))
}

/// First principal axis from PCA against the first canonical axis, over
/// repeated random draws of surface and sampling points.
///
/// Each draw re-samples the surface and, for the canonical method, the
/// sampling points in the unit ball. The shape is used in its own
/// coordinates, as a raw scan would be; the bundled reference is put in scan
/// placement (small and off-centre inside the sampling ball). PCA
/// similarities use `|cos|`; the canonical frame is sign-fixed so its
/// similarities use the signed cosine. With `normalized_diagnostic` the
/// canonical method is also run on normalized draws and reported without a
/// threshold.
pub fn run_axis_stability(shape: Option<&ReferenceShape>, cfg: &AxisStabilityConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let owned;
    let shape = match shape {
        Some(s) => s,
        None => {
            owned = ReferenceShape::Mesh(scan_placement(&reference_shape()));
            &owned
        }
    };
    if cfg.draws < 2 {
        return Err(Error::InvalidInput("axis stability needs at least 2 draws".into()));
    }
    let mut report = ExperimentReport::new("axis_stability");
    report.set("draws", cfg.draws);
    report.set("seed", cfg.seed);
    report.set("surface_counts", format!("{:?}", cfg.surface_counts).replace(',', ";"));
    report.set("sampling_counts", format!("{:?}", cfg.sampling_counts).replace(',', ";"));
    report.set("surface_seed(n; d)", format!("derive({}; surface/n/d)", cfg.seed));
    report.set("sampling_seed(m; n; d)", format!("derive({}; sampling/m/n/d)", cfg.seed));
    report.set("normalized_diagnostic", cfg.normalized_diagnostic);
    report.columns = ["method", "surface_points", "sampling_points", "mean_cos", "std_cos"]
        .map(String::from)
        .to_vec();

    let mut counts = cfg.surface_counts.clone();
    if let ReferenceShape::Cloud(c) = shape {
        let (keep, drop): (Vec<usize>, Vec<usize>) = counts.iter().partition(|&&n| n <= c.len());
        if !drop.is_empty() {
            let msg = format!("reference cloud has {} points; skipping surface counts {drop:?}", c.len());
            log::warn!("{msg}");
            report.notes.push(msg);
        }
        counts = keep;
    }

    for &n in &counts {
        let clouds: Vec<PointCloud> = (0..cfg.draws)
            .map(|d| draw_surface(shape, n, derive_seed(cfg.seed, &format!("surface/{n}/{d}"))))
            .collect::<Result<_>>()?;
        let pca: Vec<DVector<f64>> = clouds.iter().map(pca_first_axis).collect();
        let (mu, sd) = pairwise_cosine(&pca, true);
        report.rows.push(vec!["pca".into(), n.to_string(), String::new(), mu.to_string(), sd.to_string()]);
        if n == 1000 {
            report.checks.push(Check::at_most("pca_mean_cos_1000", mu, PCA_SPARSE_MAX));
        }
        let variants: &[(&str, bool)] = if cfg.normalized_diagnostic {
            &[("canonical", false), ("canonical_normalized", true)]
        } else {
            &[("canonical", false)]
        };
        for &m in &cfg.sampling_counts {
            for &(method, normalized) in variants {
                let mut axes = Vec::with_capacity(cfg.draws);
                let mut gaps = 0;
                for (d, cloud) in clouds.iter().enumerate() {
                    let seed = derive_seed(cfg.seed, &format!("sampling/{m}/{n}/{d}"));
                    let (axis, gap) = if normalized {
                        canonical_first_axis(&normalize(cloud), m, seed)?
                    } else {
                        canonical_first_axis(cloud, m, seed)?
                    };
                    gaps += usize::from(gap);
                    axes.push(axis);
                }
                let (mu, sd) = pairwise_cosine(&axes, false);
                report.rows.push(vec![method.into(), n.to_string(), m.to_string(), mu.to_string(), sd.to_string()]);
                let bound = match (normalized, n) {
                    (false, 1000) => Some(CANONICAL_SPARSE_MIN),
                    (false, 10000) => Some(CANONICAL_DENSE_MIN),
                    _ => None,
                };
                if let Some(b) = bound {
                    report.checks.push(Check::at_least(format!("canonical_mean_cos_{n}_{m}"), mu, b));
                }
                if gaps > 0 {
                    report.notes.push(format!("{method}: {gaps} of {} frames at n={n}, m={m} raised gap_warning", cfg.draws));
                }
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruct2dConfig {
    /// The grid is `grid × grid` points on `[-1, 1]²`.
    pub grid: usize,
    pub contour_vertices: usize,
    pub nodes: Vec<usize>,
    /// Also fit with `k = m` (one node per grid point).
    pub include_square: bool,
    pub seed: u64,
}

impl Default for Reconstruct2dConfig {
    fn default() -> Self {
        Reconstruct2dConfig {
            grid: 256,
            contour_vertices: 256,
            nodes: vec![300, 1000],
            include_square: false,
            seed: 0,
        }
    }
}

/// Distance from `p` to the closed polyline.
pub fn polyline_distance(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
        best = best.min(qx * qx + qy * qy);
    }
    best.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction2d {
    pub report: ExperimentReport,
    /// Columns: x, y, phi, then one reconstruction per fitted `k`.
    pub grid: DMatrix<f64>,
    pub grid_columns: Vec<String>,
}

/// The 3D pipeline in the plane: grid distance field to the bundled contour,
/// 3-column canonical projection, ELM fits of increasing width.
///
/// Per fit the report records the RMS error over the grid and the largest
/// `|φ̂|` on the contour vertices (where `φ = 0`).
pub fn reconstruct2d(cfg: &Reconstruct2dConfig) -> Result<Reconstruction2d> {
    let start = Instant::now();
    if cfg.grid < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points per side".into()));
    }
    let contour = reference_contour(cfg.contour_vertices);
    let g = cfg.grid;
    let m = g * g;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (g - 1) as f64;
    let coords = DMatrix::from_fn(m, 2, |r, c| if c == 0 { coord(r % g) } else { coord(r / g) });
    let phi: Vec<f64> = (0..m)
        .map(|r| polyline_distance([coords[(r, 0)], coords[(r, 1)]], &contour))
        .collect();
    let data = DataMatrix::from_parts(&coords, &phi, 0)?;
    let frame = canonical_projection(&data)?;
    let input = canonical_input_from_coords(&coords, &frame)?;
    let aug = augment_input(&input)?;

    let contour_coords = DMatrix::from_fn(contour.len(), 2, |r, c| contour[r][c]);
    let contour_input = canonical_input_from_coords(&contour_coords, &frame)?;
    let mut xtilde = DMatrix::from_element(contour.len(), 4, aug.sigma);
    xtilde.view_mut((0, 0), (contour.len(), 3)).copy_from(&contour_input.xbar);
    let contour_aug = AugmentedInput {
        xtilde,
        sigma: aug.sigma,
        variance: aug.variance,
    };

    let mut report = ExperimentReport::new("reconstruct2d");
    report.set("grid", format!("{g}x{g}"));
    report.set("contour_vertices", cfg.contour_vertices);
    report.set("seed", cfg.seed);
    report.set("gap_warning", frame.gap_warning);
    report.columns = ["k", "basis_seed", "rms", "max_abs_on_contour"].map(String::from).to_vec();

    let mut ks = cfg.nodes.clone();
    if cfg.include_square {
        ks.push(m);
    }
    let mut grid = DMatrix::zeros(m, 3 + ks.len());
    grid.view_mut((0, 0), (m, 2)).copy_from(&coords);
    grid.set_column(2, &DVector::from_column_slice(&phi));
    let mut grid_columns: Vec<String> = ["x", "y", "phi"].map(String::from).to_vec();
    let mut errors = Vec::new();
    for (j, &k) in ks.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &format!("basis/{k}"));
        let basis = make_basis(k, 4, seed)?;
        let feature = embed_values(&aug, &phi, &basis)?;
        let fit = reconstruct(&aug, &basis, &feature)?;
        let err = rms(&fit, &phi);
        let on_contour = hidden_activations(&contour_aug, &basis)? * DVector::from_column_slice(&feature.beta);
        let max_abs = on_contour.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        report.rows.push(vec![k.to_string(), seed.to_string(), format!("{err:e}"), format!("{max_abs:e}")]);
        report.checks.push(Check::at_most(format!("contour_k{k}"), max_abs, 3.0 * err));
        errors.push((k, err));
        grid.set_column(3 + j, &DVector::from_vec(fit));
        grid_columns.push(format!("phi_hat_k{k}"));
    }
    // more nodes must not fit worse
    errors.sort_by_key(|e| e.0);
    for w in errors.windows(2) {
        report.checks.push(Check::at_most(
            format!("rms_k{}_below_k{}", w[1].0, w[0].0),
            w[1].1,
            w[0].1,
        ));
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(Reconstruction2d {
        report,
        grid,
        grid_columns,
    })
}
