//! Batch feature extraction over a manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExtractionConfig;
use super::dataset::{DatasetManifest, Split};
use crate::canonical::{assemble_data_matrix, canonical_input, canonical_projection, CanonicalFrame};
use crate::distance_field::{compute_distance_field, generate_sampling_points, SamplingSet};
use crate::elm::{augment_input, embed, make_shared_basis, write_features, ElmBasis, FeatureSet, ShapeFeature};
use crate::error::{Error, Result};
use crate::geometry::{load_off, normalize, sample_surface, Mesh, PointCloud};
use crate::hash::derive_seed;

pub const TRAIN_FEATURES: &str = "train.feat";
pub const TEST_FEATURES: &str = "test.feat";
pub const CLASSES_FILE: &str = "classes.txt";
pub const EXTRACT_LOG: &str = "extract.log";

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub feature: ShapeFeature,
    pub frame: CanonicalFrame,
}

/// Distance field, canonical frame and ELM fit of a cloud as given (no
/// normalization).
pub fn embed_raw(cloud: &PointCloud, sampling: &SamplingSet, basis: &ElmBasis) -> Result<Embedding> {
    let field = compute_distance_field(cloud, sampling)?;
    let data = assemble_data_matrix(sampling, &field)?;
    let frame = canonical_projection(&data)?;
    let input = canonical_input(sampling, &frame)?;
    let aug = augment_input(&input)?;
    let feature = embed(&aug, &field, basis)?;
    Ok(Embedding { feature, frame })
}

/// The full per-cloud pipeline: normalize, then [`embed_raw`].
pub fn embed_cloud(cloud: &PointCloud, sampling: &SamplingSet, basis: &ElmBasis) -> Result<Embedding> {
    embed_raw(&normalize(cloud), sampling, basis)
}

/// Read-only state shared by every instance of a run.
#[derive(Debug, Clone)]
pub struct Extractor {
    config: ExtractionConfig,
    sampling: Option<SamplingSet>,
    basis: ElmBasis,
}

impl Extractor {
    pub fn new(config: &ExtractionConfig) -> Result<Self> {
        config.validate()?;
        let sampling = if config.per_instance_resample {
            None
        } else {
            Some(generate_sampling_points(config.m_sampling, config.sampling_seed)?)
        };
        Ok(Extractor {
            config: config.clone(),
            sampling,
            basis: make_shared_basis(config.k_nodes, config.basis_seed)?,
        })
    }

    pub fn basis(&self) -> &ElmBasis {
        &self.basis
    }

    pub fn config(&self) -> &ExtractionConfig {
        &self.config
    }

    pub fn sampling_for(&self, instance_id: &str) -> Result<SamplingSet> {
        match &self.sampling {
            Some(s) => Ok(s.clone()),
            None => generate_sampling_points(
                self.config.m_sampling,
                derive_seed(self.config.sampling_seed, instance_id),
            ),
        }
    }

    /// Surface sampling with the instance's derived seed, then [`Self::cloud_embeddings`].
    pub fn mesh_embeddings(&self, instance_id: &str, mesh: &Mesh) -> Result<Vec<Embedding>> {
        let seed = derive_seed(self.config.subsample_seed, &format!("{instance_id}/surface"));
        let cloud = sample_surface(mesh, self.config.n_surface, seed)?;
        self.cloud_embeddings(instance_id, &cloud)
    }

    /// One embedding without augmentation, otherwise one per random subset of
    /// `n_sub` points. Features carry the instance id and subset index.
    pub fn cloud_embeddings(&self, instance_id: &str, cloud: &PointCloud) -> Result<Vec<Embedding>> {
        let owned;
        let sampling = match &self.sampling {
            Some(s) => s,
            None => {
                owned = self.sampling_for(instance_id)?;
                &owned
            }
        };
        let clouds = if self.config.subsets == 1 {
            vec![cloud.clone()]
        } else {
            if self.config.n_sub > cloud.len() {
                return Err(Error::InvalidInput(format!(
                    "subset size {} exceeds the {} available points",
                    self.config.n_sub,
                    cloud.len()
                )));
            }
            (0..self.config.subsets)
                .map(|t| {
                    let seed = derive_seed(self.config.subsample_seed, &format!("{instance_id}/subset/{t}"));
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let idx = rand::seq::index::sample(&mut rng, cloud.len(), self.config.n_sub).into_vec();
                    cloud.subset(&idx)
                })
                .collect::<Result<Vec<_>>>()?
        };
        clouds
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let mut e = embed_cloud(c, sampling, &self.basis)?;
                e.feature.instance_id = instance_id.to_string();
                e.feature.subset = t;
                Ok(e)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub train: FeatureSet,
    pub test: FeatureSet,
    pub classes: Vec<String>,
    pub failures: Vec<InstanceFailure>,
    /// Instances with at least one near-degenerate canonical frame.
    pub gap_warnings: Vec<String>,
    pub seconds: f64,
    pub config: ExtractionConfig,
}

impl Extraction {
    pub fn basis_id(&self) -> &str {
        &self.train.basis_id
    }
}

fn load_mesh(path: &Path) -> Result<Mesh> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    load_off(BufReader::new(f)).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Dataset(format!("{}:{line}: {msg}", path.display())),
        other => other,
    })
}

/// Runs the pipeline over every manifest entry on `jobs` threads. Each
/// instance uses seeds derived from its id and results are kept in manifest
/// order, so the output does not depend on `jobs`. Per-instance failures are
/// collected; the run fails only if nothing could be extracted.
pub fn extract_features(manifest: &DatasetManifest, config: &ExtractionConfig, jobs: usize) -> Result<Extraction> {
    manifest.validate()?;
    let start = Instant::now();
    let extractor = Extractor::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let results: Vec<Result<Vec<Embedding>>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let mesh = load_mesh(&e.path)?;
                extractor.mesh_embeddings(&e.instance_id, &mesh)
            })
            .collect()
    });

    let basis_id = extractor.basis().basis_id().to_string();
    let mut train = FeatureSet::new(basis_id.clone(), config.k_nodes);
    let mut test = FeatureSet::new(basis_id, config.k_nodes);
    let mut failures = Vec::new();
    let mut gap_warnings = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(embeddings) => {
                if embeddings.iter().any(|e| e.frame.gap_warning) {
                    gap_warnings.push(entry.instance_id.clone());
                }
                let set = match entry.split {
                    Split::Train => &mut train,
                    Split::Test => &mut test,
                };
                for mut e in embeddings {
                    e.feature.label = Some(entry.label);
                    set.push(e.feature)?;
                }
            }
            Err(err) => {
                log::warn!("{}: {err}", entry.instance_id);
                failures.push(InstanceFailure {
                    instance_id: entry.instance_id.clone(),
                    error: err.to_string(),
                });
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::Dataset(format!(
            "no instance could be extracted ({} failures)",
            failures.len()
        )));
    }
    Ok(Extraction {
        train,
        test,
        classes: manifest.classes.clone(),
        failures,
        gap_warnings,
        seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes the feature files, the class table and a plain-text log.
pub fn write_extraction(ex: &Extraction, config_text: &str, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_features(&ex.train, create(&out.join(TRAIN_FEATURES))?)?;
    write_features(&ex.test, create(&out.join(TEST_FEATURES))?)?;

    let path = out.join(CLASSES_FILE);
    let mut w = create(&path)?;
    for c in &ex.classes {
        writeln!(w, "{c}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join(EXTRACT_LOG);
    let mut w = create(&path)?;
    let io = |e| Error::io(out.join(EXTRACT_LOG), e);
    writeln!(w, "# config").map_err(io)?;
    for l in config_text.lines() {
        writeln!(w, "{l}").map_err(io)?;
    }
    writeln!(w, "# summary").map_err(io)?;
    writeln!(w, "basis_id = {}", ex.basis_id()).map_err(io)?;
    writeln!(w, "train_features = {}", ex.train.len()).map_err(io)?;
    writeln!(w, "test_features = {}", ex.test.len()).map_err(io)?;
    writeln!(w, "failures = {}", ex.failures.len()).map_err(io)?;
    writeln!(w, "gap_warnings = {}", ex.gap_warnings.len()).map_err(io)?;
    writeln!(w, "seconds = {:.3}", ex.seconds).map_err(io)?;
    for f in &ex.failures {
        writeln!(w, "failed {}: {}", f.instance_id, f.error).map_err(io)?;
    }
    for id in &ex.gap_warnings {
        writeln!(w, "gap_warning {id}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_classes(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mesh;
    use crate::pipeline::dataset::ManifestEntry;

    fn tetra() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]],
            vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
        )
        .unwrap()
    }

    fn small() -> ExtractionConfig {
        ExtractionConfig {
            n_surface: 256,
            m_sampling: 256,
            k_nodes: 16,
            subsets: 1,
            ..ExtractionConfig::with_seed(3)
        }
    }

    #[test]
    fn one_feature_per_instance_without_augmentation() {
        let ex = Extractor::new(&small()).unwrap();
        let e = ex.mesh_embeddings("t", &tetra()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].feature.beta.len(), 16);
        assert_eq!(e[0].feature.instance_id, "t");
    }

    #[test]
    fn augmentation_tags_subsets() {
        let cfg = ExtractionConfig {
            subsets: 4,
            n_sub: 64,
            ..small()
        };
        let e = Extractor::new(&cfg).unwrap().mesh_embeddings("t", &tetra()).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|x| x.feature.instance_id == "t"));
        assert_eq!(e.iter().map(|x| x.feature.subset).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_ne!(e[0].feature.beta, e[1].feature.beta);
    }

    #[test]
    fn per_instance_sampling_differs_between_instances() {
        let cfg = ExtractionConfig {
            per_instance_resample: true,
            ..small()
        };
        let ex = Extractor::new(&cfg).unwrap();
        assert_ne!(ex.sampling_for("a").unwrap().id(), ex.sampling_for("b").unwrap().id());
        assert_eq!(ex.sampling_for("a").unwrap().id(), ex.sampling_for("a").unwrap().id());
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.off");
        let mut f = File::create(&good).unwrap();
        tetra().write_off(&mut f).unwrap();
        let bad = dir.path().join("bad.off");
        fs::write(&bad, "OFF\n3 1 0\n0 0 0\n").unwrap();
        let entry = |id: &str, path: &Path, split| ManifestEntry {
            instance_id: id.into(),
            path: path.to_path_buf(),
            label: 0,
            split,
        };
        let manifest = DatasetManifest {
            entries: vec![entry("g", &good, Split::Train), entry("b", &bad, Split::Test)],
            classes: vec!["tet".into()],
        };
        let ex = extract_features(&manifest, &small(), 2).unwrap();
        assert_eq!(ex.train.len(), 1);
        assert_eq!(ex.test.len(), 0);
        assert_eq!(ex.failures.len(), 1);
        assert_eq!(ex.failures[0].instance_id, "b");

        let only_bad = DatasetManifest {
            entries: vec![entry("b", &bad, Split::Train)],
            classes: vec!["tet".into()],
        };
        assert!(matches!(extract_features(&only_bad, &small(), 1), Err(Error::Dataset(_))));

        let out = dir.path().join("out");
        write_extraction(&ex, "k_nodes = 16\n", &out).unwrap();
        assert_eq!(read_classes(&out.join(CLASSES_FILE)).unwrap(), vec!["tet"]);
        let log = fs::read_to_string(out.join(EXTRACT_LOG)).unwrap();
        assert!(log.contains("failed b:"));
    }
}
