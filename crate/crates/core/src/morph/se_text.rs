//! Plain-text structuring elements.
//!
//! One row per line, cells separated by whitespace. `.` is a don't-care cell,
//! anything else parses as a number, and a leading `@` marks the origin
//! (`@0.7`, `@.`). Without an `@` the origin is the grid center. Lines
//! starting with `#` are comments.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::{BinarySe, GraySe};

struct Grid {
    cells: Vec<Vec<Option<f64>>>,
    origin: (usize, usize),
}

fn parse_grid(text: &str) -> Result<Grid> {
    let mut cells = Vec::new();
    let mut origin = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let r = cells.len();
        let mut row = Vec::new();
        for (c, tok) in line.split_whitespace().enumerate() {
            let tok = match tok.strip_prefix('@') {
                Some(rest) => {
                    if origin.replace((r, c)).is_some() {
                        return Err(Error::Format("more than one `@` origin marker".into()));
                    }
                    rest
                }
                None => tok,
            };
            row.push(match tok {
                "." => None,
                t => Some(t.parse::<f64>().map_err(|_| Error::Format(format!("bad cell `{t}` at row {r}, column {c}")))?),
            });
        }
        cells.push(row);
    }
    let cols = cells.first().map_or(0, Vec::len);
    if cols == 0 {
        return Err(shape_err!("empty structuring element"));
    }
    if cells.iter().any(|r| r.len() != cols) {
        return Err(shape_err!("ragged structuring element rows"));
    }
    let origin = origin.unwrap_or((cells.len() / 2, cols / 2));
    Ok(Grid { cells, origin })
}

pub fn parse_gray<T: Scalar>(text: &str) -> Result<GraySe<T>> {
    let g = parse_grid(text)?;
    let rows: Vec<&[Option<f64>]> = g.cells.iter().map(Vec::as_slice).collect();
    GraySe::from_rows(&rows, g.origin)
}

/// Binary form: `1` is set, `0` or `.` is unset.
pub fn parse_binary(text: &str) -> Result<BinarySe> {
    let g = parse_grid(text)?;
    let rows = g
        .cells
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| match c {
                    None => Ok(0u8),
                    Some(v) if *v == 0.0 => Ok(0u8),
                    Some(v) if *v == 1.0 => Ok(1u8),
                    Some(v) => Err(Error::Format(format!("binary cell must be 0 or 1, got {v}"))),
                })
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
    BinarySe::from_rows(&rows, g.origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_and_dnc() {
        let se: GraySe<f64> = parse_gray(". 0.7 0.7\n. @. 0.7\n. . .\n").unwrap();
        assert_eq!(se.origin(), (1, 1));
        assert_eq!(se.dnc(), &[true, false, false, true, true, false, true, true, true]);
        assert_eq!(se.weights().get(&[0, 2]), 0.7);
    }

    #[test]
    fn default_origin_is_center() {
        let se: GraySe<f32> = parse_gray("# comment\n1 2 3\n4 5 6\n7 8 9").unwrap();
        assert_eq!(se.origin(), (1, 1));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_gray::<f64>("1 x").is_err());
        assert!(parse_gray::<f64>("1 2\n3").is_err());
        assert!(parse_gray::<f64>("@1 @2").is_err());
        assert!(parse_binary("0 2").is_err());
    }
}
