//! Shared text framing for grid-shaped maps.
//!
//! ```text
//! # sagwave-grid v1, t0=300, x0=0, dt=1, dx=10, n_t=900, n_x=50
//! <n_x lines of n_t comma-separated values>
//! <n_x lines of n_t comma-separated 0/1 mask bits>
//! ```
//!
//! Line `i` of each block is spatial row `i` (row 0 = upstream end `x0`).

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scalar::Scalar;

pub(crate) const GRID_TAG: &str = "sagwave-grid v1";
pub(crate) const ACTIVATION_TAG: &str = "sagwave-activation v1";
pub(crate) const BINARY_TAG: &str = "sagwave-binary v1";
pub(crate) const PROB_TAG: &str = "sagwave-prob v1";

pub(crate) fn write_header<S: Scalar, W: Write>(
    w: &mut W,
    tag: &str,
    spec: &GridSpec<S>,
    extra: &[(&str, String)],
) -> Result<()> {
    write!(
        w,
        "# {tag}, t0={}, x0={}, dt={}, dx={}, n_t={}, n_x={}",
        spec.t0, spec.x0, spec.dt, spec.dx, spec.n_t, spec.n_x
    )?;
    for (k, v) in extra {
        write!(w, ", {k}={v}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub(crate) fn write_block<T, W: Write>(
    w: &mut W,
    block: &Array2<T>,
    fmt: impl Fn(&T) -> String,
) -> Result<()> {
    for row in block.rows() {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub(crate) fn write_bits<W: Write>(w: &mut W, bits: &Array2<bool>) -> Result<()> {
    write_block(w, bits, |b| if *b { "1".into() } else { "0".into() })
}

/// A parsed frame: header spec, extra header keys, and the two raw blocks.
pub(crate) struct Frame<S> {
    pub spec: GridSpec<S>,
    pub extra: Vec<(String, String)>,
    pub values: Vec<Vec<String>>,
    pub bits: Array2<bool>,
}

impl<S> Frame<S> {
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub(crate) fn read_frame<S: Scalar, R: BufRead>(r: R, tag: &str) -> Result<Frame<S>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::BadHeader("empty input".into()))??;
    let rest = header
        .strip_prefix("# ")
        .and_then(|h| h.strip_prefix(tag))
        .ok_or_else(|| Error::BadHeader(format!("expected `# {tag}`, got `{header}`")))?;

    let mut fields = Vec::new();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::BadHeader(format!("malformed header field `{part}`")))?;
        fields.push((k.trim().to_string(), v.trim().to_string()));
    }
    let take = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::BadHeader(format!("missing `{key}`")))
    };
    let float = |key: &str| -> Result<S> {
        let v = take(key)?;
        v.parse::<f64>()
            .map(S::lit)
            .map_err(|_| Error::BadHeader(format!("`{key}={v}` is not a number")))
    };
    let count = |key: &str| -> Result<usize> {
        let v = take(key)?;
        v.parse::<usize>()
            .map_err(|_| Error::BadHeader(format!("`{key}={v}` is not a count")))
    };
    let spec = GridSpec::new(
        float("t0")?,
        float("x0")?,
        float("dt")?,
        float("dx")?,
        count("n_t")?,
        count("n_x")?,
    )?;
    let extra = fields
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "t0" | "x0" | "dt" | "dx" | "n_t" | "n_x"))
        .cloned()
        .collect();

    let mut line_no = 1;
    let mut next_row = |lines: &mut std::io::Lines<R>| -> Result<Vec<String>> {
        line_no += 1;
        let line = lines.next().ok_or_else(|| Error::Format {
            line: line_no,
            msg: "unexpected end of input".into(),
        })??;
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cells.len() != spec.n_t {
            return Err(Error::Format {
                line: line_no,
                msg: format!("expected {} values, found {}", spec.n_t, cells.len()),
            });
        }
        Ok(cells)
    };

    let mut values = Vec::with_capacity(spec.n_x);
    for _ in 0..spec.n_x {
        values.push(next_row(&mut lines)?);
    }
    let mut bits = Array2::from_elem((spec.n_x, spec.n_t), false);
    for i in 0..spec.n_x {
        let row = next_row(&mut lines)?;
        for (j, cell) in row.iter().enumerate() {
            bits[[i, j]] = match cell.as_str() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Format {
                        line: spec.n_x + i + 2,
                        msg: format!("mask bit must be 0 or 1, found `{other}`"),
                    })
                }
            };
        }
    }
    Ok(Frame {
        spec,
        extra,
        values,
        bits,
    })
}

pub(crate) fn parse_values<S: Scalar>(
    frame_values: &[Vec<String>],
    n_x: usize,
    n_t: usize,
) -> Result<Array2<S>> {
    let mut out = Array2::from_elem((n_x, n_t), S::zero());
    for (i, row) in frame_values.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Format {
                line: i + 2,
                msg: format!("`{cell}` is not a number"),
            })?;
            out[[i, j]] = S::lit(v);
        }
    }
    Ok(out)
}
