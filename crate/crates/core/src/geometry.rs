//! Meshes, point clouds, OFF/XYZ readers, surface sampling and normalization.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Triangle mesh. Polygons are fan-triangulated when loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some((i, f)) = faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&v| v >= nv))
        {
            return Err(Error::InvalidInput(format!(
                "face {i} references vertex {:?} but mesh has {nv} vertices",
                f
            )));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                triangle_area(&a, &b, &c)
            })
            .collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(&Point3) -> Point3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends another mesh, offsetting its indices.
    pub fn merge(&mut self, other: &Mesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }

    pub fn write_off<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "OFF")?;
        writeln!(w, "{} {} 0", self.vertices.len(), self.faces.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
        Ok(())
    }
}

pub fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let u = sub(b, a);
    let v = sub(c, a);
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

#[inline]
fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Where a cloud came from. Carried along for reports; never affects numerics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source: Option<String>,
    pub seed: Option<u64>,
}

/// A set of surface points. Coordinates are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub provenance: Provenance,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud {
            points,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
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

    /// Mean point. Each coordinate is summed in sorted order, so the result
    /// does not depend on the order of the points.
    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        let mut col = Vec::with_capacity(self.points.len());
        for (k, ck) in c.iter_mut().enumerate() {
            col.clear();
            col.extend(self.points.iter().map(|p| p[k]));
            col.sort_unstable_by(f64::total_cmp);
            *ck = col.iter().sum::<f64>() / n;
        }
        c
    }

    /// Row-vector convention: every point `p` becomes `p · R`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> PointCloud {
        self.map(|p| rotate_row(p, r))
    }

    pub fn scaled(&self, s: f64) -> PointCloud {
        self.map(|p| [p[0] * s, p[1] * s, p[2] * s])
    }

    pub fn translated(&self, t: &Point3) -> PointCloud {
        self.map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
    }

    /// Reorders points so that output `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        assert_eq!(perm.len(), self.points.len());
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Points at the given indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<PointCloud> {
        let pts = idx.iter().map(|&i| self.points[i]).collect();
        Ok(PointCloud::new(pts)?.with_provenance(self.provenance.clone()))
    }

    fn map(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn write_xyz<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "{:e} {:e} {:e}", p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

#[inline]
pub fn rotate_row(p: &Point3, r: &Matrix3<f64>) -> Point3 {
    let v = Vector3::new(p[0], p[1], p[2]);
    let out = r.transpose() * v;
    [out[0], out[1], out[2]]
}

/// Uniformly distributed rotation (Haar measure) from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q));
    q.to_rotation_matrix().into_inner()
}

/// Reads an ASCII OFF mesh.
///
/// Accepts `#` comments, blank lines, and the ModelNet quirk where the count
/// line is glued to the magic (`OFF490 518 0`). Faces with more than three
/// vertices are fan-triangulated around their first vertex; trailing color
/// values on vertex or face lines are ignored.
pub fn load_off<R: BufRead>(reader: R) -> Result<Mesh> {
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| {
        let lineno = i + 1;
        match l {
            Err(e) => Some(Err(Error::parse(lineno, format!("read error: {e}")))),
            Ok(s) => {
                let content = s.split('#').next().unwrap_or("").trim().to_string();
                if content.is_empty() {
                    None
                } else {
                    Some(Ok((lineno, content)))
                }
            }
        }
    });
    let mut last_line = 0usize;
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some(Ok((n, s))) => {
                last_line = n;
                Ok((n, s))
            }
            Some(Err(e)) => Err(e),
            None => Err(Error::parse(
                last_line + 1,
                format!("unexpected end of stream while reading {what}"),
            )),
        }
    };

    let (hline, header) = next("header")?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(hline, format!("expected OFF header, found {header:?}")))?;
    let (cline, counts) = if rest.trim().is_empty() {
        next("element counts")?
    } else {
        (hline, rest.trim().to_string())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(cline, format!("bad element count {t:?}")))
        })
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(Error::parse(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, s) = next("vertices")?;
        let coords: Vec<f64> = s
            .split_whitespace()
            .take(3)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad coordinate {t:?}")))
            })
            .collect::<Result<_>>()?;
        if coords.len() != 3 {
            return Err(Error::parse(ln, "vertex needs three coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse(ln, "non-finite vertex coordinate"));
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, s) = next("faces")?;
        let mut tok = s.split_whitespace();
        let arity: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(ln, "bad face vertex count"))?;
        if arity < 3 {
            return Err(Error::parse(ln, format!("face has only {arity} vertices")));
        }
        let idx: Vec<usize> = tok
            .take(arity)
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(ln, format!("bad vertex index {t:?}")))
            })
            .collect::<Result<_>>()?;
        if idx.len() != arity {
            return Err(Error::parse(
                ln,
                format!("face declares {arity} vertices but lists {}", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(Error::parse(
                ln,
                format!("vertex index {bad} out of range ({nv} vertices)"),
            ));
        }
        for j in 1..arity - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Mesh::new(vertices, faces)
}

/// Reads one `x y z` triple per line. Extra columns are ignored.
pub fn load_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let ln = i + 1;
        let line = line.map_err(|e| Error::parse(ln, format!("read error: {e}")))?;
        let s = line.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let c: Vec<f64> = s
            .split_whitespace()
            .take(3)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad coordinate {t:?}")))
            })
            .collect::<Result<_>>()?;
        if c.len() != 3 {
            return Err(Error::parse(ln, "expected three coordinates"));
        }
        pts.push([c[0], c[1], c[2]]);
    }
    PointCloud::new(pts)
}

/// Draws `n` points uniformly over the mesh surface: a triangle is picked with
/// probability proportional to its area, then a point inside it with uniform
/// barycentric coordinates.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 surface samples, got {n}"
        )));
    }
    let areas = mesh.triangle_areas();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let pick = WeightedIndex::new(&areas)
        .map_err(|e| Error::Degenerate(format!("cannot weight triangles by area: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let [a, b, c] = mesh.triangle(pick.sample(&mut rng));
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        pts.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(PointCloud::new(pts)?.with_provenance(Provenance {
        source: None,
        seed: Some(seed),
    }))
}

/// Translates the centroid to the origin and scales so the farthest point has
/// norm 1. A cloud whose points all coincide maps to all zeros.
pub fn normalize(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let centered: Vec<Point3> = cloud.points.iter().map(|p| sub(p, &c)).collect();
    let r = centered.iter().map(norm).fold(0.0, f64::max);
    let points = if r > 0.0 {
        centered
            .iter()
            .map(|p| [p[0] / r, p[1] / r, p[2] / r])
            .collect()
    } else {
        vec![[0.0; 3]; centered.len()]
    };
    PointCloud {
        points,
        provenance: cloud.provenance.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn tri_mesh() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn off_minimal_triangle() {
        let src = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = load_off(Cursor::new(src)).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_glued_header() {
        let src = "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = load_off(Cursor::new(src)).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn off_quad_is_fanned() {
        let src = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = load_off(Cursor::new(src)).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_comments_and_colors() {
        let src = "# made by hand\nOFF\n\n3 1 0 # counts\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 255 0 0\n";
        let m = load_off(Cursor::new(src)).unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn off_errors_carry_line_numbers() {
        let bad_header = "PLY\n3 1 0\n";
        match load_off(Cursor::new(bad_header)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let out_of_range = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        match load_off(Cursor::new(out_of_range)) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let truncated = "OFF\n3 1 0\n0 0 0\n1 0 0\n";
        match load_off(Cursor::new(truncated)) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("end of stream"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn off_roundtrip_through_writer() {
        let m = tri_mesh();
        let mut buf = Vec::new();
        m.write_off(&mut buf).unwrap();
        assert_eq!(load_off(Cursor::new(buf)).unwrap(), m);
    }

    #[test]
    fn xyz_reader() {
        let c = load_xyz(Cursor::new("1 2 3\n\n4 5 6 0.5\n")).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert!(load_xyz(Cursor::new("1 2\n")).is_err());
    }

    #[test]
    fn samples_stay_inside_triangle() {
        // unit-area right triangle in a tilted plane
        let s = 2f64.sqrt();
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [s, 0.0, 0.0], [0.0, s * 0.6, s * 0.8]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!((m.surface_area() - 1.0).abs() < 1e-12);
        let c = sample_surface(&m, 1000, 3).unwrap();
        let normal = [0.0, -0.8, 0.6];
        for p in c.points() {
            let d = p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2];
            assert!(d.abs() < 1e-12);
            // barycentric bounds in the plane basis
            let u = p[0] / s;
            let v = (p[1] * 0.6 + p[2] * 0.8) / s;
            assert!(u >= -1e-12 && v >= -1e-12 && u + v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sampling_weights_by_area() {
        // areas 1 and 3; binomial std at p=0.75, n=1e5 is 0.00137, so 0.01 is > 7 sigma
        let m = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [16.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let areas = m.triangle_areas();
        assert!((areas[0] - 1.0).abs() < 1e-12 && (areas[1] - 3.0).abs() < 1e-12);
        let c = sample_surface(&m, 100_000, 11).unwrap();
        let big = c.points().iter().filter(|p| p[0] >= 10.0).count() as f64 / 1e5;
        assert!((big - 0.75).abs() <= 0.01, "fraction {big}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = tri_mesh();
        assert_eq!(
            sample_surface(&m, 50, 9).unwrap(),
            sample_surface(&m, 50, 9).unwrap()
        );
        assert_ne!(
            sample_surface(&m, 50, 9).unwrap(),
            sample_surface(&m, 50, 10).unwrap()
        );
    }

    #[test]
    fn sampling_rejects_zero_area() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(sample_surface(&m, 10, 0), Err(Error::Degenerate(_))));
        assert!(sample_surface(&tri_mesh(), 3, 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(normalize(&c).points(), c.points());
        let c = PointCloud::new(vec![[2.0, 2.0, 2.0], [4.0, 2.0, 2.0]]).unwrap();
        assert_eq!(
            normalize(&c).points(),
            &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        );
        let c = PointCloud::new(vec![[3.0, 3.0, 3.0]; 5]).unwrap();
        assert!(normalize(&c).points().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn face_permutation_keeps_distribution() {
        // compare per-face hit fractions of the original and a face-reversed mesh
        let mut m = tri_mesh();
        for k in 1..4 {
            let off = k as f64 * 3.0;
            let t = Mesh::new(
                vec![[off, 0.0, 0.0], [off + k as f64, 0.0, 0.0], [off, 1.0, 0.0]],
                vec![[0, 1, 2]],
            )
            .unwrap();
            m.merge(&t);
        }
        let mut rev = m.clone();
        rev.faces.reverse();
        let bucket = |c: &PointCloud| {
            let mut h = [0usize; 4];
            for p in c.points() {
                h[((p[0] / 3.0).floor() as usize).min(3)] += 1;
            }
            h.map(|x| x as f64 / c.len() as f64)
        };
        let a = bucket(&sample_surface(&m, 100_000, 1).unwrap());
        let b = bucket(&sample_surface(&rev, 100_000, 2).unwrap());
        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }
}
