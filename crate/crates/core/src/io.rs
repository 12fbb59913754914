//! CSV and JSON file formats.
//!
//! - Data matrices: one CSV row per matrix row, no header. Empty cells and
//!   `nan`/`na` mark unobserved entries.
//! - Masks: either a 0/1 grid in the same layout, or a pair list with header
//!   `row,col` and 1-based indices.
//! - Numbers are written with 17 significant digits; `inf` marks infinite or
//!   undefined values in grids.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::graph::ObservationMask;
use crate::{DataMatrix, Error, Grid, Result};

/// Full-precision decimal text.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "" | "nan" | "na")
}

fn read_records(reader: impl Read) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

fn rectangular(rows: &[Vec<String>]) -> Result<(usize, usize)> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("empty matrix file".into()));
    }
    let m = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != m {
            return Err(Error::Parse(format!(
                "line {} has {} fields, expected {m}",
                i + 1,
                r.len()
            )));
        }
    }
    Ok((n, m))
}

/// A data matrix with `NaN` in unobserved cells, and the mask of finite cells.
pub fn parse_data(reader: impl Read) -> Result<(DataMatrix, ObservationMask)> {
    let rows = read_records(reader)?;
    let (n, m) = rectangular(&rows)?;
    let mut data = DataMatrix::from_element(n, m, f64::NAN);
    let mut mask = ObservationMask::empty(n, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "cell ({}, {}): {cell:?} is not a number",
                    i + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "cell ({}, {}) is not finite",
                    i + 1,
                    j + 1
                )));
            }
            data[(i, j)] = v;
            mask.insert(i, j)?;
        }
    }
    Ok((data, mask))
}

pub fn read_data(path: impl AsRef<Path>) -> Result<(DataMatrix, ObservationMask)> {
    parse_data(File::open(path)?)
}

/// A parsed mask and the number of repeated pairs that were collapsed.
#[derive(Debug, Clone)]
pub struct MaskFile {
    pub mask: ObservationMask,
    pub duplicates: usize,
}

/// Parses a mask. Pair lists take their shape from `shape` when given,
/// otherwise from the largest indices present.
pub fn parse_mask(reader: impl Read, shape: Option<(usize, usize)>) -> Result<MaskFile> {
    let rows = read_records(reader)?;
    let is_pairs = rows.first().is_some_and(|r| {
        r.len() == 2 && r[0].eq_ignore_ascii_case("row") && r[1].eq_ignore_ascii_case("col")
    });
    if !is_pairs {
        let (n, m) = rectangular(&rows)?;
        if let Some(s) = shape {
            if s != (n, m) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", s.0, s.1),
                    found: format!("{n}x{m} mask"),
                });
            }
        }
        let mut mask = ObservationMask::empty(n, m);
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                match cell.as_str() {
                    "1" => {
                        mask.insert(i, j)?;
                    }
                    "0" => {}
                    other => {
                        return Err(Error::Parse(format!(
                            "mask cell ({}, {}) is {other:?}, expected 0 or 1",
                            i + 1,
                            j + 1
                        )))
                    }
                }
            }
        }
        return Ok(MaskFile {
            mask,
            duplicates: 0,
        });
    }

    let mut pairs = Vec::with_capacity(rows.len() - 1);
    for (line, r) in rows.iter().enumerate().skip(1) {
        if r.len() != 2 {
            return Err(Error::Parse(format!("line {} needs two fields", line + 1)));
        }
        let parse = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k - 1),
                _ => Err(Error::Parse(format!(
                    "line {}: {s:?} is not a 1-based index",
                    line + 1
                ))),
            }
        };
        pairs.push((parse(&r[0])?, parse(&r[1])?));
    }
    let (n, m) = shape.unwrap_or_else(|| {
        pairs
            .iter()
            .fold((0, 0), |(n, m), &(i, j)| (n.max(i + 1), m.max(j + 1)))
    });
    let mut mask = ObservationMask::empty(n, m);
    let mut duplicates = 0;
    for (i, j) in pairs {
        if !mask.insert(i, j)? {
            duplicates += 1;
        }
    }
    Ok(MaskFile { mask, duplicates })
}

pub fn read_mask(path: impl AsRef<Path>, shape: Option<(usize, usize)>) -> Result<MaskFile> {
    parse_mask(File::open(path)?, shape)
}

/// Writes a 0/1 grid.
pub fn write_mask(path: impl AsRef<Path>, mask: &ObservationMask) -> Result<()> {
    let grid = Grid::from_fn(mask.n_rows(), mask.n_cols(), |i, j| {
        mask.contains(i, j) as u8
    });
    write_grid(path, &grid, |v| v.to_string())
}

/// Writes a grid as header-less CSV, formatting each cell with `fmt`.
pub fn write_grid<T>(
    path: impl AsRef<Path>,
    grid: &Grid<T>,
    fmt: impl Fn(&T) -> String,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    for i in 0..grid.rows() {
        w.write_record(grid.row(i).iter().map(&fmt))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a float grid; `None` becomes `inf`.
pub fn write_float_grid(path: impl AsRef<Path>, grid: &Grid<Option<f64>>) -> Result<()> {
    write_grid(path, grid, |v| {
        v.map_or_else(|| "inf".to_string(), format_f64)
    })
}

pub fn write_data(path: impl AsRef<Path>, data: &DataMatrix) -> Result<()> {
    let grid = Grid::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)]);
    write_grid(path, &grid, |&v| {
        if v.is_nan() {
            String::new()
        } else {
            format_f64(v)
        }
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_with_gaps() {
        let (d, m) = parse_data("1.5,,3\nnan,2,NA\n".as_bytes()).unwrap();
        assert_eq!((d.nrows(), d.ncols()), (2, 3));
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![(0, 0), (0, 2), (1, 1)]);
        assert_eq!(d[(1, 1)], 2.0);
        assert!(d[(0, 1)].is_nan());
        assert!(parse_data("1,2\n3\n".as_bytes()).is_err());
        assert!(parse_data("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn mask_formats() {
        let grid = parse_mask("0,1\n1,1\n".as_bytes(), None).unwrap();
        assert_eq!(grid.mask.len(), 3);
        let pairs = parse_mask("row,col\n1,2\n2,1\n2,2\n1,2\n".as_bytes(), None).unwrap();
        assert_eq!(pairs.mask, grid.mask);
        assert_eq!(pairs.duplicates, 1);
        let wide = parse_mask("row,col\n1,1\n".as_bytes(), Some((3, 4))).unwrap();
        assert_eq!((wide.mask.n_rows(), wide.mask.n_cols()), (3, 4));
        assert!(parse_mask("row,col\n0,1\n".as_bytes(), None).is_err());
        assert!(parse_mask("row,col\n5,1\n".as_bytes(), Some((2, 2))).is_err());
        assert!(parse_mask("0,2\n".as_bytes(), None).is_err());
    }

    #[test]
    fn full_precision_round_trip() {
        let x = 0.1 + 0.2;
        assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(format_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = ObservationMask::from_pairs(2, 3, [(0, 1), (1, 2)]).unwrap();
        let p = dir.path().join("mask.csv");
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p, None).unwrap().mask, mask);

        let mut data = DataMatrix::from_element(2, 3, f64::NAN);
        data[(0, 1)] = 1.0 / 3.0;
        data[(1, 2)] = -2.5;
        let p = dir.path().join("data.csv");
        write_data(&p, &data).unwrap();
        let (back, m) = read_data(&p).unwrap();
        assert_eq!(m, mask);
        assert_eq!(back[(0, 1)], 1.0 / 3.0);
    }
}
