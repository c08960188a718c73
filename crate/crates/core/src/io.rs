//! Plain-text field files.
//!
//! ```text
//! # format_version=1
//! # m=1
//! # g=1.5
//! # n=1024
//! # r_max=30
//! 0,0,0
//! 0.029325513196480937,0.0123,-0.0004
//! ...
//! ```
//!
//! Metadata lines start with `#` and hold one `key=value` pair. Data lines
//! are `r,re_u,im_u` written with the shortest representation that parses
//! back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::grid::{make_uniform_grid, RadialField};
use crate::scalar::Real;

pub const FORMAT_VERSION: &str = "1";

/// Ordered `key=value` metadata carried by a field file.
pub type Metadata = BTreeMap<String, String>;

/// Writes `field` together with any extra metadata keys.
pub fn write_field<T: Real, W: Write>(field: &RadialField<T>, extra: &Metadata, mut out: W) -> Result<()> {
    let grid = field.grid();
    let mut text = String::new();
    let _ = writeln!(text, "# format_version={FORMAT_VERSION}");
    let _ = writeln!(text, "# m={}", field.m());
    let _ = writeln!(text, "# g={}", field.g());
    let _ = writeln!(text, "# n={}", grid.n());
    let _ = writeln!(text, "# r_max={}", grid.r_max());
    for (k, v) in extra {
        if !matches!(k.as_str(), "format_version" | "m" | "g" | "n" | "r_max") {
            let _ = writeln!(text, "# {k}={v}");
        }
    }
    for (r, u) in grid.nodes().iter().zip(field.values()) {
        let _ = writeln!(text, "{},{},{}", r, u.re, u.im);
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn parse_value<V: FromStr>(meta: &Metadata, key: &str, line_of: &BTreeMap<String, usize>) -> Result<V> {
    let raw = meta.get(key).ok_or_else(|| CssError::MissingKey(key.to_string()))?;
    raw.parse().map_err(|_| CssError::Parse {
        line: line_of[key],
        column: key.len() + 4,
        msg: format!("cannot parse value `{raw}` for `{key}`"),
    })
}

/// Reads a field file, returning the field and all metadata.
pub fn read_field<T: Real, R: BufRead>(input: R) -> Result<(RadialField<T>, Metadata)> {
    let mut meta = Metadata::new();
    let mut line_of = BTreeMap::new();
    let mut rows: Vec<(usize, String)> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(body) = trimmed.strip_prefix('#') {
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(CssError::Parse { line: lineno, column: 1, msg: "metadata must be `key=value`".into() });
            };
            meta.insert(k.trim().to_string(), v.trim().to_string());
            line_of.insert(k.trim().to_string(), lineno);
        } else {
            rows.push((lineno, line));
        }
    }

    match meta.get("format_version") {
        None => return Err(CssError::MissingKey("format_version".into())),
        Some(v) if v != FORMAT_VERSION => return Err(CssError::UnsupportedVersion(v.clone())),
        Some(_) => {}
    }
    let m: i32 = parse_value(&meta, "m", &line_of)?;
    let g: T = parse_value(&meta, "g", &line_of)?;
    let n: usize = parse_value(&meta, "n", &line_of)?;
    let r_max: T = parse_value(&meta, "r_max", &line_of)?;
    let grid = make_uniform_grid(n, r_max)?;

    if rows.len() != n {
        return Err(CssError::LengthMismatch { expected: n, found: rows.len() });
    }
    let tol = T::lit(1e-9) * r_max;
    let mut values = Vec::with_capacity(n);
    for (i, (lineno, line)) in rows.iter().enumerate() {
        let mut cols = [T::zero(); 3];
        let mut column = 1;
        let mut count = 0;
        for (c, cell) in line.split(',').enumerate() {
            if c >= 3 {
                return Err(CssError::Parse { line: *lineno, column, msg: "expected three columns".into() });
            }
            cols[c] = cell.trim().parse().map_err(|_| CssError::Parse {
                line: *lineno,
                column,
                msg: format!("not a number: `{}`", cell.trim()),
            })?;
            column += cell.len() + 1;
            count += 1;
        }
        if count != 3 {
            return Err(CssError::Parse { line: *lineno, column, msg: "expected three columns".into() });
        }
        if (cols[0] - grid.nodes()[i]).abs() > tol {
            return Err(CssError::Parse {
                line: *lineno,
                column: 1,
                msg: format!("radius {} does not match grid node {}", cols[0], grid.nodes()[i]),
            });
        }
        values.push(Complex::new(cols[1], cols[2]));
    }
    let field = RadialField::new(grid, m, g, values)?;
    Ok((field, meta))
}

/// Writes a field to `path`.
pub fn save_field<T: Real>(path: impl AsRef<std::path::Path>, field: &RadialField<T>, extra: &Metadata) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field(field, extra, std::io::BufWriter::new(file))
}

/// Reads a field from `path`.
pub fn load_field<T: Real>(path: impl AsRef<std::path::Path>) -> Result<(RadialField<T>, Metadata)> {
    let file = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(file))
}
