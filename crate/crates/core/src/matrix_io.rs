//! Row-major text format for square matrices.
//!
//! ```text
//! D
//! a11 a12 ... a1D
//! ...
//! aD1 aD2 ... aDD
//! ```
//!
//! Entries are written in shortest round-trip form, so reading a written
//! matrix reproduces it bit for bit.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("only square matrices are serialized".into()));
    }
    writeln!(out, "{}", m.nrows())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| r.as_ref().map_or(true, |(_, l)| !l.trim().is_empty()));
    let (line, header) = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "missing dimension header".into(),
    })?;
    let dim: usize = header.trim().parse().map_err(|e| Error::Parse {
        line,
        message: format!("bad dimension {header:?}: {e}"),
    })?;
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (line, text) = lines.next().transpose()?.ok_or(Error::Parse {
            line: line + i + 1,
            message: format!("expected {dim} rows, found {i}"),
        })?;
        let values = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad entry {tok:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line,
                message: format!("expected {dim} entries, found {}", values.len()),
            });
        }
        for (j, v) in values.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    if let Some(extra) = lines.next().transpose()? {
        return Err(Error::Parse {
            line: extra.0,
            message: "trailing data after matrix".into(),
        });
    }
    Ok(m)
}
