//! Seeded four-class synthetic dataset written as a `class/split/*.off` tree.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shapes::{box_mesh, cylinder_mesh, ellipsoid_mesh};
use crate::error::{Error, Result};
use crate::geometry::{random_rotation, rotate_row, Mesh};
use crate::hash::derive_seed;

pub const SYNTHETIC_CLASSES: [&str; 4] = ["box", "cylinder", "dumbbell", "ellipsoid"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    /// Per-instance uniform scale range.
    pub scale: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_per_class: 100,
            test_per_class: 30,
            seed: 2024,
            scale: (0.5, 2.0),
        }
    }
}

/// One instance of `class` in its own frame, before rotation and scaling.
pub fn synthetic_shape<R: Rng>(class: &str, rng: &mut R) -> Result<Mesh> {
    let mesh = match class {
        "ellipsoid" => ellipsoid_mesh(
            [0.0; 3],
            [1.0, rng.random_range(0.45..0.75), rng.random_range(0.2..0.4)],
            16,
            32,
        ),
        "box" => box_mesh([1.0, rng.random_range(0.45..0.75), rng.random_range(0.2..0.4)]),
        "cylinder" => cylinder_mesh(rng.random_range(0.25..0.5), 1.0, 32),
        "dumbbell" => {
            let r = rng.random_range(0.3..0.45);
            let d = rng.random_range(0.6..0.9);
            let mut m = ellipsoid_mesh([-d, 0.0, 0.0], [r; 3], 12, 24);
            m.merge(&ellipsoid_mesh([d, 0.0, 0.0], [r; 3], 12, 24));
            m
        }
        other => return Err(Error::InvalidInput(format!("unknown synthetic class {other:?}"))),
    };
    Ok(mesh)
}

/// Instance `index` of `class` with a random rotation and scale. Depends only
/// on `(spec.seed, class, split, index)`.
pub fn synthetic_instance(spec: &SyntheticSpec, class: &str, split: &str, index: usize) -> Result<Mesh> {
    let seed = derive_seed(spec.seed, &format!("{class}/{split}/{index}"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = synthetic_shape(class, &mut rng)?;
    let r = random_rotation(&mut rng);
    let s = rng.random_range(spec.scale.0..=spec.scale.1);
    Ok(mesh.map_vertices(|p| {
        let q = rotate_row(p, &r);
        [s * q[0], s * q[1], s * q[2]]
    }))
}

/// Writes `root/<class>/{train,test}/<class>_<nnnn>.off`.
pub fn write_synthetic_dataset(spec: &SyntheticSpec, root: &Path) -> Result<usize> {
    let mut count = 0;
    for class in SYNTHETIC_CLASSES {
        for (split, n) in [("train", spec.train_per_class), ("test", spec.test_per_class)] {
            let dir = root.join(class).join(split);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..n {
                let path = dir.join(format!("{class}_{i:04}.off"));
                let mesh = synthetic_instance(spec, class, split, i)?;
                let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                mesh.write_off(BufWriter::new(f)).map_err(|e| Error::io(&path, e))?;
                count += 1;
            }
        }
    }
    Ok(count)
}
