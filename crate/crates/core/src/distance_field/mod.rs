//! Spatial sampling sets and unsigned distance fields `phi(x) = min_p |x - p|`.

mod kdtree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::hash::{points_id, unordered_points_id};

pub use kdtree::{squared_distance, KdTree};

/// The spatial points at which a distance field is evaluated.
///
/// Sets produced by [`generate_sampling_points`] lie in the closed unit ball.
/// Sets built with [`SamplingSet::from_points`] (co-rotated or co-scaled copies,
/// say) carry no such guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSet {
    points: Vec<Point3>,
    seed: Option<u64>,
    id: u64,
}

impl SamplingSet {
    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("sampling set is empty".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "sampling set has a non-finite coordinate".into(),
            ));
        }
        let id = points_id(&points);
        Ok(SamplingSet {
            points,
            seed: None,
            id,
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Content identity; changes whenever any coordinate or the row order changes.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Row-vector rotation `X · R`.
    pub fn rotated(&self, r: &nalgebra::Matrix3<f64>) -> SamplingSet {
        let pts = self
            .points
            .iter()
            .map(|p| crate::geometry::rotate_row(p, r))
            .collect();
        SamplingSet::from_points(pts).expect("rotation keeps points finite")
    }

    pub fn scaled(&self, s: f64) -> SamplingSet {
        let pts = self
            .points
            .iter()
            .map(|p| [p[0] * s, p[1] * s, p[2] * s])
            .collect();
        SamplingSet::from_points(pts).expect("finite scale keeps points finite")
    }

    /// Output row `i` is input row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SamplingSet {
        assert_eq!(perm.len(), self.points.len());
        let pts = perm.iter().map(|&i| self.points[i]).collect();
        SamplingSet::from_points(pts).expect("permutation keeps points finite")
    }
}

/// `m` points uniform in the closed unit ball, by rejection from the cube.
pub fn generate_sampling_points(m: usize, seed: u64) -> Result<SamplingSet> {
    if m < 8 {
        return Err(Error::InvalidInput(format!(
            "need at least 8 sampling points, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(m);
    while points.len() < m {
        let p: Point3 = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            points.push(p);
        }
    }
    let id = points_id(&points);
    Ok(SamplingSet {
        points,
        seed: Some(seed),
        id,
    })
}

/// Exact nearest-neighbour index over a point cloud. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct NnIndex {
    tree: KdTree,
}

impl NnIndex {
    pub fn nearest_distance(&self, q: &Point3) -> f64 {
        self.tree.nearest_distance(q)
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

pub fn build_nn_index(cloud: &PointCloud) -> Result<NnIndex> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty cloud".into()));
    }
    Ok(NnIndex {
        tree: KdTree::build(cloud.points()),
    })
}

/// Distances from every sampling point to its nearest cloud point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub phi: Vec<f64>,
    pub sampling_id: u64,
    /// Order-independent identity of the cloud.
    pub cloud_id: u64,
}

impl DistanceField {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

pub fn compute_distance_field(cloud: &PointCloud, sampling: &SamplingSet) -> Result<DistanceField> {
    let index = build_nn_index(cloud)?;
    Ok(distance_field_with_index(&index, cloud, sampling))
}

/// Same as [`compute_distance_field`] with a prebuilt index for `cloud`.
pub fn distance_field_with_index(
    index: &NnIndex,
    cloud: &PointCloud,
    sampling: &SamplingSet,
) -> DistanceField {
    let phi = sampling
        .points()
        .par_iter()
        .with_min_len(256)
        .map(|x| index.nearest_distance(x))
        .collect();
    DistanceField {
        phi,
        sampling_id: sampling.id(),
        cloud_id: unordered_points_id(cloud.points()),
    }
}

/// Builds a field from precomputed values, e.g. after an external permutation.
pub fn distance_field_from_values(phi: Vec<f64>, sampling: &SamplingSet, cloud_id: u64) -> Result<DistanceField> {
    if phi.len() != sampling.len() {
        return Err(Error::InvalidInput(format!(
            "{} distances for {} sampling points",
            phi.len(),
            sampling.len()
        )));
    }
    if phi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "distances must be finite and non-negative".into(),
        ));
    }
    Ok(DistanceField {
        phi,
        sampling_id: sampling.id(),
        cloud_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_inside_ball() {
        let a = generate_sampling_points(8192, 7).unwrap();
        let b = generate_sampling_points(8192, 7).unwrap();
        assert_eq!(a, b);
        assert!(a
            .points()
            .iter()
            .all(|p| crate::geometry::norm(p) <= 1.0));
        assert_ne!(a.id(), generate_sampling_points(8192, 8).unwrap().id());
        assert!(generate_sampling_points(7, 0).is_err());
    }

    #[test]
    fn mean_norm_of_uniform_ball() {
        // E|x| = int_0^1 r * 3r^2 dr = 3/4
        let s = generate_sampling_points(100_000, 1).unwrap();
        let mean = s.points().iter().map(crate::geometry::norm).sum::<f64>() / 1e5;
        assert!((mean - 0.75).abs() <= 0.01, "mean norm {mean}");
    }

    #[test]
    fn single_point_cloud() {
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let idx = build_nn_index(&cloud).unwrap();
        assert_eq!(idx.nearest_distance(&[0.5, 0.0, 0.0]), 0.5);
        assert_eq!(idx.nearest_distance(&[0.0, 3.0, 4.0]), 5.0);
        assert_eq!(idx.nearest_distance(&[0.0; 3]), 0.0);
    }

    #[test]
    fn tie_between_two_points() {
        let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        let s = SamplingSet::from_points(vec![[0.0; 3]]).unwrap();
        let f = compute_distance_field(&cloud, &s).unwrap();
        assert_eq!(f.phi, vec![1.0]);
        assert_eq!(f.sampling_id, s.id());
    }

    #[test]
    fn from_values_validates() {
        let s = SamplingSet::from_points(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(distance_field_from_values(vec![0.1], &s, 0).is_err());
        assert!(distance_field_from_values(vec![0.1, -1.0], &s, 0).is_err());
        assert!(distance_field_from_values(vec![0.1, 0.2], &s, 0).is_ok());
    }
}
