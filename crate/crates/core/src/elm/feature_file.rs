//! Line-oriented feature files.
//!
//! ```text
//! basis_id=<hex>
//! k=<int>
//! count=<int>
//! <instance_id> <label|-> <beta_1> ... <beta_k>
//! ```
//!
//! Floats are written in shortest round-trip form. An instance with several
//! features (subset augmentation) appears on consecutive lines with the same
//! id; the subset index is recovered from the order of appearance.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::ShapeFeature;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub basis_id: String,
    pub k: usize,
    pub features: Vec<ShapeFeature>,
}

impl FeatureSet {
    pub fn new(basis_id: impl Into<String>, k: usize) -> Self {
        FeatureSet {
            basis_id: basis_id.into(),
            k,
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, f: ShapeFeature) -> Result<()> {
        f.ensure_basis(&self.basis_id)?;
        if f.beta.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "feature {} has {} weights, expected {}",
                f.instance_id,
                f.beta.len(),
                self.k
            )));
        }
        self.features.push(f);
        Ok(())
    }

    /// Features grouped by instance id, in first-appearance order.
    pub fn by_instance(&self) -> Vec<(&str, Vec<&ShapeFeature>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&ShapeFeature>> = HashMap::new();
        for f in &self.features {
            groups
                .entry(f.instance_id.as_str())
                .or_insert_with(|| {
                    order.push(f.instance_id.as_str());
                    Vec::new()
                })
                .push(f);
        }
        order
            .into_iter()
            .map(|id| (id, groups.remove(id).unwrap()))
            .collect()
    }
}

pub fn write_features<W: Write>(set: &FeatureSet, mut w: W) -> Result<()> {
    let io = |e| Error::io("<feature stream>", e);
    writeln!(w, "basis_id={}", set.basis_id).map_err(io)?;
    writeln!(w, "k={}", set.k).map_err(io)?;
    writeln!(w, "count={}", set.features.len()).map_err(io)?;
    for f in &set.features {
        if f.instance_id.is_empty() || f.instance_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInput(format!(
                "instance id {:?} must be non-empty without whitespace",
                f.instance_id
            )));
        }
        let mut line = String::with_capacity(24 * (f.beta.len() + 2));
        line.push_str(&f.instance_id);
        line.push(' ');
        match f.label {
            Some(l) => line.push_str(&l.to_string()),
            None => line.push('-'),
        }
        for b in &f.beta {
            line.push(' ');
            line.push_str(&format!("{b:e}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_features<R: BufRead>(reader: R) -> Result<FeatureSet> {
    let mut lines = reader.lines().enumerate();
    let mut header = |key: &str| -> Result<String> {
        let (i, l) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("missing {key} header")))?;
        let l = l.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        l.strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| Error::parse(i + 1, format!("expected {key}=...")))
    };
    let basis_id = header("basis_id")?;
    let k: usize = header("k")?
        .parse()
        .map_err(|_| Error::parse(2, "bad k"))?;
    let count: usize = header("count")?
        .parse()
        .map_err(|_| Error::parse(3, "bad count"))?;

    let mut set = FeatureSet::new(basis_id.clone(), k);
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, l) in lines {
        let ln = i + 1;
        let l = l.map_err(|e| Error::parse(ln, e.to_string()))?;
        if l.trim().is_empty() {
            continue;
        }
        let mut tok = l.split_whitespace();
        let id = tok.next().unwrap().to_string();
        let label = match tok.next() {
            Some("-") => None,
            Some(t) => Some(
                t.parse::<usize>()
                    .map_err(|_| Error::parse(ln, format!("bad label {t:?}")))?,
            ),
            None => return Err(Error::parse(ln, "missing label")),
        };
        let beta: Vec<f64> = tok
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad weight {t:?}")))
            })
            .collect::<Result<_>>()?;
        if beta.len() != k {
            return Err(Error::parse(
                ln,
                format!("expected {k} weights, found {}", beta.len()),
            ));
        }
        let subset = seen.entry(id.clone()).or_insert(0);
        set.features.push(ShapeFeature {
            beta,
            basis_id: basis_id.clone(),
            label,
            instance_id: id,
            subset: *subset,
        });
        *subset += 1;
    }
    if set.features.len() != count {
        return Err(Error::parse(
            0,
            format!("header declares {count} features, found {}", set.features.len()),
        ));
    }
    Ok(set)
}
