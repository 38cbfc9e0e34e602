//! Sparse bag-of-words text format.
//!
//! One sample per line: `<label> (<index>:<value>)*`, whitespace separated,
//! 0-based feature indices. Labels are binary; `0`/`1` are canonical and
//! `-1`/`+1` are accepted as `0`/`1`. Blank lines are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::nnlib::Matrix;

fn parse_label(tok: &str) -> std::result::Result<usize, String> {
    match tok {
        "0" | "-1" => Ok(0),
        "1" | "+1" => Ok(1),
        other => Err(format!("label '{other}' is not binary")),
    }
}

/// Parses the text of a sparse file into a dense `rows x dim` set.
pub fn parse_sparse_bow(text: &str, dim: usize, path: &Path) -> Result<LabeledSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let mut toks = line.split_whitespace();
        let Some(label) = toks.next() else { continue };
        labels.push(parse_label(label).map_err(|m| err(lineno, m))?);
        let mut row = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("expected index:value, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("bad feature index '{idx}'")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("bad feature value '{val}'")))?;
            if idx >= dim {
                return Err(err(lineno, format!("feature index {idx} >= dim {dim}")));
            }
            if !val.is_finite() {
                return Err(err(lineno, format!("non-finite feature value '{val}'")));
            }
            if row.iter().any(|&(i, _)| i == idx) {
                return Err(err(lineno, format!("feature index {idx} repeated")));
            }
            row.push((idx, val));
        }
        entries.push(row);
    }
    let mut x = Matrix::zeros((labels.len(), dim));
    for (r, row) in entries.iter().enumerate() {
        for &(c, v) in row {
            x[[r, c]] = v;
        }
    }
    Ok(LabeledSet { x, y: labels })
}

pub fn load_sparse_bow(path: impl AsRef<Path>, dim: usize) -> Result<LabeledSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_sparse_bow(&text, dim, path)
}

/// Writes non-zero entries only, in index order.
pub fn write_sparse_bow(path: impl AsRef<Path>, set: &LabeledSet) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (row, &y) in set.x.rows().into_iter().zip(&set.y) {
        write!(out, "{y}")?;
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {j}:{v}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
