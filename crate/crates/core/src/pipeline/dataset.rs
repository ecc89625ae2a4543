//! Dataset manifests over a `class/{train,test}/*.off` directory tree.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub classes: Vec<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.instance_id.as_str()) {
                return Err(Error::Dataset(format!("duplicate instance id {}", e.instance_id)));
            }
            if e.label >= self.classes.len() {
                return Err(Error::Dataset(format!(
                    "{} has label {} outside the class table",
                    e.instance_id, e.label
                )));
            }
        }
        Ok(())
    }

    /// Both splits must be present for a train/evaluate run.
    pub fn ensure_splits(&self) -> Result<()> {
        for s in [Split::Train, Split::Test] {
            if self.split(s).next().is_none() {
                return Err(Error::Dataset(format!("no {} instances", s.name())));
            }
        }
        Ok(())
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        out.push(entry.map_err(|e| Error::io(path, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Lists every `root/<class>/<split>/*.off` file. Classes and files are in
/// lexicographic order; labels follow the class order.
pub fn scan_modelnet(root: &Path) -> Result<DatasetManifest> {
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut manifest = DatasetManifest::default();
    for class_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let class = class_dir.file_name().unwrap().to_string_lossy().into_owned();
        let label = manifest.classes.len();
        for split in [Split::Train, Split::Test] {
            let dir = class_dir.join(split.name());
            if !dir.is_dir() {
                return Err(Error::Dataset(format!(
                    "class {class:?} has no {} split",
                    split.name()
                )));
            }
            let files: Vec<PathBuf> = sorted_dir(&dir)?
                .into_iter()
                .filter(|p| {
                    p.extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("off"))
                })
                .collect();
            if files.is_empty() {
                return Err(Error::Dataset(format!(
                    "class {class:?} has no files in its {} split",
                    split.name()
                )));
            }
            for path in files {
                fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let stem = path.file_stem().unwrap().to_string_lossy();
                manifest.entries.push(ManifestEntry {
                    instance_id: sanitize(&format!("{class}/{}/{stem}", split.name())),
                    path,
                    label,
                    split,
                });
            }
        }
        manifest.classes.push(sanitize(&class));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
    }

    #[test]
    fn two_classes_two_splits() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["chair", "bed"] {
            for s in ["train", "test"] {
                touch(&dir.path().join(c).join(s).join(format!("{c}_0001.off")));
            }
        }
        fs::write(dir.path().join("README"), "ignored").unwrap();
        let m = scan_modelnet(dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.classes, vec!["bed", "chair"]);
        assert_eq!(m.entries[0].instance_id, "bed/train/bed_0001");
        assert_eq!(m.entries[0].label, 0);
        assert_eq!(m.entries[3].split, Split::Test);
        assert_eq!(m.entries[3].label, 1);
        m.ensure_splits().unwrap();
    }

    #[test]
    fn missing_split_names_the_class() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("sofa/train/a.off"));
        let err = scan_modelnet(dir.path()).unwrap_err().to_string();
        assert!(err.contains("sofa") && err.contains("test"), "{err}");
    }

    #[test]
    fn empty_tree_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_modelnet(dir.path()), Err(Error::Dataset(_))));
        assert!(scan_modelnet(&dir.path().join("nope")).is_err());
    }
}
