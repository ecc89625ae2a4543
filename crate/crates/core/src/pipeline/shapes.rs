//! Procedural meshes and the bundled reference shapes.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::geometry::{Mesh, Point3};

/// Latitude/longitude tessellation of an axis-aligned ellipsoid.
pub fn ellipsoid_mesh(center: Point3, radii: Point3, rings: usize, segments: usize) -> Mesh {
    let mut v = vec![[center[0], center[1], center[2] + radii[2]]];
    for i in 1..rings {
        let t = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let p = 2.0 * PI * j as f64 / segments as f64;
            v.push([
                center[0] + radii[0] * t.sin() * p.cos(),
                center[1] + radii[1] * t.sin() * p.sin(),
                center[2] + radii[2] * t.cos(),
            ]);
        }
    }
    v.push([center[0], center[1], center[2] - radii[2]]);
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut f = Vec::new();
    for j in 0..segments {
        f.push([0, ring(1, j), ring(1, j + 1)]);
        f.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            f.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            f.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    Mesh::new(v, f).expect("valid tessellation")
}

/// Axis-aligned box centred at the origin.
pub fn box_mesh(half: Point3) -> Mesh {
    let v: Vec<Point3> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -half[0] } else { half[0] },
                if i & 2 == 0 { -half[1] } else { half[1] },
                if i & 4 == 0 { -half[2] } else { half[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let f = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh::new(v, f).expect("valid box")
}

/// Closed cylinder along z, centred at the origin.
pub fn cylinder_mesh(radius: f64, half_height: f64, segments: usize) -> Mesh {
    let mut v = Vec::with_capacity(2 * segments + 2);
    for z in [-half_height, half_height] {
        for j in 0..segments {
            let p = 2.0 * PI * j as f64 / segments as f64;
            v.push([radius * p.cos(), radius * p.sin(), z]);
        }
    }
    v.push([0.0, 0.0, -half_height]);
    v.push([0.0, 0.0, half_height]);
    let (bot, top) = (2 * segments, 2 * segments + 1);
    let mut f = Vec::new();
    for j in 0..segments {
        let k = (j + 1) % segments;
        f.push([j, k, segments + k]);
        f.push([j, segments + k, segments + j]);
        f.push([bot, k, j]);
        f.push([top, segments + j, segments + k]);
    }
    Mesh::new(v, f).expect("valid cylinder")
}

/// Area-weighted covariance of a mesh surface.
pub fn surface_covariance(mesh: &Mesh) -> Matrix3<f64> {
    let areas = mesh.triangle_areas();
    let total: f64 = areas.iter().sum();
    let mut mean = [0.0; 3];
    let mut second = Matrix3::zeros();
    for (f, a) in areas.iter().enumerate() {
        let t = mesh.triangle(f);
        let w = a / total;
        for k in 0..3 {
            mean[k] += w * (t[0][k] + t[1][k] + t[2][k]) / 3.0;
        }
        // exact second moment of a uniform triangle
        for r in 0..3 {
            for c in 0..3 {
                let s: f64 = (0..3).map(|i| t[i][r] * t[i][c]).sum();
                let sr: f64 = (0..3).map(|i| t[i][r]).sum();
                let sc: f64 = (0..3).map(|i| t[i][c]).sum();
                second[(r, c)] += w * (s + sr * sc) / 12.0;
            }
        }
    }
    let m = nalgebra::Vector3::from(mean);
    second - m * m.transpose()
}

/// Asymmetric animal-like reference shape: a body, an off-axis head, two
/// ears, a tail and four feet, stretched along its second principal axis
/// until the two leading surface covariance eigenvalues agree.
pub fn reference_shape() -> Mesh {
    let mut m = ellipsoid_mesh([0.0, 0.0, 0.0], [0.55, 0.42, 0.38], 24, 48);
    m.merge(&ellipsoid_mesh([0.48, 0.12, 0.3], [0.22, 0.2, 0.2], 16, 32));
    m.merge(&ellipsoid_mesh([0.5, 0.05, 0.62], [0.05, 0.04, 0.18], 10, 16));
    m.merge(&ellipsoid_mesh([0.44, 0.22, 0.6], [0.05, 0.04, 0.16], 10, 16));
    m.merge(&ellipsoid_mesh([-0.58, -0.05, 0.12], [0.1, 0.1, 0.1], 10, 20));
    for (x, y) in [(0.3, 0.22), (0.3, -0.22), (-0.3, 0.25), (-0.3, -0.2)] {
        m.merge(&ellipsoid_mesh([x, y, -0.38], [0.1, 0.08, 0.06], 8, 16));
    }
    for _ in 0..8 {
        let eig = SymmetricEigen::new(surface_covariance(&m));
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let (l1, l2) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
        let stretch = (l1 / l2).sqrt();
        let u = eig.eigenvectors.column(idx[1]).into_owned();
        // p + (stretch - 1)(p·u)u: scale along the second principal axis only
        m = m.map_vertices(|p| {
            let d = (stretch - 1.0) * (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]);
            [p[0] + d * u[0], p[1] + d * u[1], p[2] + d * u[2]]
        });
    }
    m
}

/// Centre and radius of a typical raw laser scan of a small object, in the
/// scanner's metric frame.
pub const SCAN_CENTER: Point3 = [-0.017, 0.110, -0.0015];
pub const SCAN_RADIUS: f64 = 0.1;

/// Moves a mesh to scan placement: its vertex centroid goes to
/// [`SCAN_CENTER`] and its farthest vertex to distance [`SCAN_RADIUS`] from it.
pub fn scan_placement(mesh: &Mesh) -> Mesh {
    let n = mesh.vertices.len() as f64;
    let mut c = [0.0; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            c[k] += v[k] / n;
        }
    }
    let r = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let s = SCAN_RADIUS / r;
    mesh.map_vertices(|v| {
        [
            (v[0] - c[0]) * s + SCAN_CENTER[0],
            (v[1] - c[1]) * s + SCAN_CENTER[1],
            (v[2] - c[2]) * s + SCAN_CENTER[2],
        ]
    })
}

/// Closed asymmetric planar contour (last vertex connects to the first).
pub fn reference_contour(vertices: usize) -> Vec<[f64; 2]> {
    (0..vertices)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / vertices as f64;
            let r = 0.55 + 0.18 * (3.0 * t).cos() + 0.08 * (5.0 * t + 0.7).sin() + 0.05 * (2.0 * t).sin();
            [r * t.cos() + 0.1, 0.8 * r * t.sin() - 0.05]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn primitives_have_expected_areas() {
        let b = box_mesh([1.0, 2.0, 3.0]);
        assert_relative_eq!(b.surface_area(), 8.0 * (2.0 + 3.0 + 6.0), max_relative = 1e-12);
        let s = ellipsoid_mesh([0.0; 3], [1.0; 3], 64, 128);
        assert_relative_eq!(s.surface_area(), 4.0 * PI, max_relative = 2e-3);
        let c = cylinder_mesh(1.0, 1.0, 256);
        assert_relative_eq!(c.surface_area(), 2.0 * PI * 2.0 + 2.0 * PI, max_relative = 1e-3);
    }

    #[test]
    fn box_covariance_is_exact() {
        let c = surface_covariance(&box_mesh([1.0, 1.0, 1.0]));
        // each face contributes uniformly; the cube is isotropic
        assert_relative_eq!(c[(0, 0)], c[(1, 1)], max_relative = 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
        assert_relative_eq!(c[(0, 0)], (2.0 / 6.0) * 1.0 + (4.0 / 6.0) / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn reference_shape_has_tied_leading_eigenvalues() {
        let m = reference_shape();
        let mut ev: Vec<f64> = SymmetricEigen::new(surface_covariance(&m)).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!((ev[0] - ev[1]).abs() / ev[0] < 1e-6, "{ev:?}");
        assert!(ev[2] < 0.9 * ev[1], "{ev:?}");
    }

    #[test]
    fn contour_is_closed_and_simple_enough() {
        let c = reference_contour(200);
        assert_eq!(c.len(), 200);
        assert!(c.iter().all(|p| p[0].hypot(p[1]) < 1.0));
    }
}
