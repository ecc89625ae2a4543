//! Canonical frames from the thin SVD of `M = [X | phi]`.
//!
//! The right singular vectors are sign-fixed so that `Uᵀ phi >= 0`
//! componentwise, which makes `M · V̄ = U S diag(c)` independent of any
//! rotation applied jointly to the shape and the sampling coordinates. The
//! routines work for any coordinate dimension `d` (the data matrix has
//! `d + 1` columns); the 3D pipeline uses `d = 3` and the planar
//! reconstruction experiment `d = 2`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::distance_field::{DistanceField, SamplingSet};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Relative gap between adjacent singular values below which the frame is
/// flagged as ambiguous.
pub const GAP_WARNING_THRESHOLD: f64 = 1e-3;

/// `m × (d + 1)`: sampling coordinates followed by the distance column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    matrix: DMatrix<f64>,
    source_id: u64,
}

impl DataMatrix {
    /// Builds `[coords | phi]` from an `m × d` coordinate matrix.
    pub fn from_parts(coords: &DMatrix<f64>, phi: &[f64], source_id: u64) -> Result<Self> {
        let (m, d) = coords.shape();
        if phi.len() != m {
            return Err(Error::InvalidInput(format!(
                "{m} sampling rows but {} distances",
                phi.len()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidInput("data matrix has no rows".into()));
        }
        if phi.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("negative distance".into()));
        }
        let mut matrix = DMatrix::zeros(m, d + 1);
        matrix.view_mut((0, 0), (m, d)).copy_from(coords);
        matrix.set_column(d, &DVector::from_column_slice(phi));
        Ok(DataMatrix { matrix, source_id })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Coordinate dimension `d`.
    pub fn dim(&self) -> usize {
        self.matrix.ncols() - 1
    }

    pub fn phi(&self) -> DVector<f64> {
        self.matrix.column(self.dim()).into_owned()
    }

    pub fn source_id(&self) -> u64 {
        self.source_id
    }
}

pub fn sampling_matrix(sampling: &SamplingSet) -> DMatrix<f64> {
    DMatrix::from_fn(sampling.len(), 3, |i, j| sampling.points()[i][j])
}

pub fn assemble_data_matrix(sampling: &SamplingSet, field: &DistanceField) -> Result<DataMatrix> {
    if field.sampling_id != sampling.id() {
        return Err(Error::InvalidInput(
            "distance field was computed on a different sampling set".into(),
        ));
    }
    DataMatrix::from_parts(&sampling_matrix(sampling), &field.phi, sampling.id())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFrame {
    /// Sign-fixed right singular vectors, one per column, ordered by
    /// decreasing singular value. Orthogonal.
    pub vbar: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `sign(Uᵀ phi)` with `sign(0) = +1`.
    pub sign_vector: DVector<f64>,
    /// Adjacent singular values nearly coincide; the frame is not unique.
    pub gap_warning: bool,
    pub source_id: u64,
}

impl CanonicalFrame {
    pub fn dim(&self) -> usize {
        self.vbar.nrows() - 1
    }

    /// Smallest `(σ_i − σ_{i+1}) / σ_1` over adjacent pairs.
    pub fn min_relative_gap(&self) -> f64 {
        relative_gap(&self.singular_values)
    }

    /// First canonical axis (first column of `V̄`).
    pub fn first_axis(&self) -> DVector<f64> {
        self.vbar.column(0).into_owned()
    }
}

fn relative_gap(s: &DVector<f64>) -> f64 {
    if !(s[0] > 0.0) {
        return 0.0;
    }
    s.as_slice()
        .windows(2)
        .map(|w| (w[0] - w[1]) / s[0])
        .fold(f64::INFINITY, f64::min)
}

/// Thin SVD of `M`, sorted by decreasing singular value, with the sign of each
/// singular pair chosen so that `Uᵀ phi >= 0`.
pub fn canonical_projection(data: &DataMatrix) -> Result<CanonicalFrame> {
    let m = data.matrix();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("data matrix has non-finite entries".into()));
    }
    let cols = m.ncols();
    if m.nrows() < cols {
        return Err(Error::InvalidInput(format!(
            "canonical projection needs at least {cols} rows, got {}",
            m.nrows()
        )));
    }
    let svd = nalgebra::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V");

    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let phi = data.phi();
    let mut vbar = DMatrix::zeros(cols, cols);
    let mut sigma = DVector::zeros(cols);
    let mut signs = DVector::zeros(cols);
    for (dst, &src) in order.iter().enumerate() {
        let proj = u.column(src).dot(&phi);
        let c = if proj < 0.0 { -1.0 } else { 1.0 };
        signs[dst] = c;
        sigma[dst] = svd.singular_values[src];
        for r in 0..cols {
            vbar[(r, dst)] = c * v_t[(src, r)];
        }
    }
    let gap_warning = relative_gap(&sigma) < GAP_WARNING_THRESHOLD;
    if gap_warning {
        log::debug!("near-degenerate spectrum {:?}", sigma.as_slice());
    }
    Ok(CanonicalFrame {
        vbar,
        singular_values: sigma,
        sign_vector: signs,
        gap_warning,
        source_id: data.source_id(),
    })
}

/// `X̄ = X · V̄[0..d, :]`: sampling coordinates expressed in the canonical
/// frame with the distance contribution dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalInput {
    pub xbar: DMatrix<f64>,
}

impl CanonicalInput {
    pub fn rows(&self) -> usize {
        self.xbar.nrows()
    }
}

pub fn canonical_input(sampling: &SamplingSet, frame: &CanonicalFrame) -> Result<CanonicalInput> {
    if frame.source_id != sampling.id() {
        return Err(Error::InvalidInput(
            "canonical frame belongs to a different sampling set".into(),
        ));
    }
    canonical_input_from_coords(&sampling_matrix(sampling), frame)
}

/// Dimension-generic form of [`canonical_input`]; `coords` is `m × d`.
pub fn canonical_input_from_coords(
    coords: &DMatrix<f64>,
    frame: &CanonicalFrame,
) -> Result<CanonicalInput> {
    let d = frame.dim();
    if coords.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "frame is {d}-dimensional but coordinates have {} columns",
            coords.ncols()
        )));
    }
    let block = frame.vbar.rows(0, d);
    Ok(CanonicalInput {
        xbar: coords * block,
    })
}

/// `[cloud | 0] · V̄`, the zero-level set carried into the canonical frame.
pub fn canonicalize_surface(cloud: &PointCloud, frame: &CanonicalFrame) -> DMatrix<f64> {
    assert_eq!(frame.dim(), 3, "surface canonicalization is 3D only");
    let pts = DMatrix::from_fn(cloud.len(), 3, |i, j| cloud.points()[i][j]);
    pts * frame.vbar.rows(0, 3)
}

pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, header: &[&str], mut w: W) -> std::io::Result<()> {
    if !header.is_empty() {
        writeln!(w, "{}", header.join(","))?;
    }
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
