//! Plain-text model checkpoints.
//!
//! ```text
//! canonshape-mlp 1
//! layer_sizes=<in> <hidden...> <classes>
//! basis_id=<hex>
//! classes=<name> <name> ...
//! seed=<u64>
//! dropout=<f64>
//! standardize=<0|1>
//! [mean=<in floats>]
//! [std=<in floats>]
//! W <layer>            followed by <in> rows of <out> floats
//! b <layer>            followed by one row of <out> floats
//! ```

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::mlp::{Layer, MlpModel, Standardizer};
use crate::error::{Error, Result};

const MAGIC: &str = "canonshape-mlp 1";

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter()
        .map(|x| format!("{x:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint<W: Write>(model: &MlpModel, mut w: W) -> Result<()> {
    if model.class_names.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
        return Err(Error::InvalidInput(
            "class names must be non-empty without whitespace".into(),
        ));
    }
    let io = |e| Error::io("<checkpoint stream>", e);
    let sizes: Vec<String> = model.layer_sizes().iter().map(|s| s.to_string()).collect();
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "layer_sizes={}", sizes.join(" ")).map_err(io)?;
    writeln!(w, "basis_id={}", model.basis_id).map_err(io)?;
    writeln!(w, "classes={}", model.class_names.join(" ")).map_err(io)?;
    writeln!(w, "seed={}", model.seed).map_err(io)?;
    writeln!(w, "dropout={}", model.dropout_rate).map_err(io)?;
    match &model.standardizer {
        Some(s) => {
            writeln!(w, "standardize=1").map_err(io)?;
            writeln!(w, "mean={}", join(s.mean.iter().copied())).map_err(io)?;
            writeln!(w, "std={}", join(s.std.iter().copied())).map_err(io)?;
        }
        None => writeln!(w, "standardize=0").map_err(io)?,
    }
    for (i, l) in model.layers.iter().enumerate() {
        writeln!(w, "W {i}").map_err(io)?;
        for r in l.w.row_iter() {
            writeln!(w, "{}", join(r.iter().copied())).map_err(io)?;
        }
        writeln!(w, "b {i}").map_err(io)?;
        writeln!(w, "{}", join(l.b.iter().copied())).map_err(io)?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(Error::parse(self.line, e.to_string())),
            None => Err(Error::parse(self.line, "unexpected end of checkpoint")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let l = self.next()?;
        l.strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| Error::parse(self.line, format!("expected {key}=")))
    }

    fn floats(&mut self, s: &str, n: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(self.line, format!("bad number {t:?}")))
            })
            .collect::<Result<_>>()?;
        if v.len() != n {
            return Err(Error::parse(
                self.line,
                format!("expected {n} values, found {}", v.len()),
            ));
        }
        Ok(v)
    }
}

pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<MlpModel> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    if lines.next()?.trim() != MAGIC {
        return Err(Error::parse(1, "not a canonshape checkpoint"));
    }
    let sizes: Vec<usize> = lines
        .keyed("layer_sizes")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(2, "bad layer size")))
        .collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(Error::parse(2, "need at least input and output sizes"));
    }
    let basis_id = lines.keyed("basis_id")?;
    let class_names: Vec<String> = lines
        .keyed("classes")?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if class_names.len() != *sizes.last().unwrap() {
        return Err(Error::parse(4, "class names do not match output size"));
    }
    let seed = lines
        .keyed("seed")?
        .parse()
        .map_err(|_| Error::parse(5, "bad seed"))?;
    let dropout_rate = lines
        .keyed("dropout")?
        .parse()
        .map_err(|_| Error::parse(6, "bad dropout"))?;
    let standardizer = match lines.keyed("standardize")?.as_str() {
        "1" => {
            let m = lines.keyed("mean")?;
            let mean = lines.floats(&m, sizes[0])?;
            let s = lines.keyed("std")?;
            let std = lines.floats(&s, sizes[0])?;
            Some(Standardizer { mean, std })
        }
        "0" => None,
        other => return Err(Error::parse(lines.line, format!("bad standardize flag {other:?}"))),
    };
    let mut layers = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        if lines.next()? != format!("W {i}") {
            return Err(Error::parse(lines.line, format!("expected W {i}")));
        }
        let mut data = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            let l = lines.next()?;
            data.extend(lines.floats(&l, fan_out)?);
        }
        if lines.next()? != format!("b {i}") {
            return Err(Error::parse(lines.line, format!("expected b {i}")));
        }
        let l = lines.next()?;
        let b = lines.floats(&l, fan_out)?;
        layers.push(Layer {
            w: DMatrix::from_row_slice(fan_in, fan_out, &data),
            b: DVector::from_vec(b),
        });
    }
    Ok(MlpModel {
        layers,
        seed,
        dropout_rate,
        basis_id,
        class_names,
        standardizer,
    })
}
