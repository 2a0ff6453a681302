//! Plain-text formats: paths, coordinates, responses and weights as CSV.
//!
//! Floats are written with the shortest decimal that round-trips, so a
//! write/read cycle is lossless.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::path::{interpolate_missing, Path, PathError};
use crate::selection::CriterionRow;
use crate::spatial::{SpatialError, SpatialWeights};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}, line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: PathError,
    },
    #[error("{path}: {source}")]
    Spatial {
        path: PathBuf,
        #[source]
        source: SpatialError,
    },
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.into(),
        source,
    })
}

fn write_lines(path: &FsPath, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let wrap = |source| IoError::File {
        path: path.into(),
        source,
    };
    let mut out = create(path)?;
    writeln!(out, "{header}").map_err(wrap)?;
    for r in rows {
        writeln!(out, "{r}").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &FsPath) -> Result<Self> {
        let csv_err = |source| IoError::Csv {
            path: path.into(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let header = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self {
            path: path.into(),
            header,
            rows,
        })
    }

    fn expect_prefix(&self, names: &[&str]) -> Result<()> {
        let ok = self.header.len() >= names.len() && names.iter().zip(&self.header).all(|(a, b)| a == b);
        if ok {
            Ok(())
        } else {
            Err(self.format(format!(
                "header must start with `{}`, got `{}`",
                names.join(","),
                self.header.join(",")
            )))
        }
    }

    /// Trailing columns named `{prefix}1..{prefix}k`; returns `k`.
    fn numbered(&self, skip: usize, prefix: &str) -> Result<usize> {
        let rest = &self.header[skip..];
        for (i, h) in rest.iter().enumerate() {
            if *h != format!("{prefix}{}", i + 1) {
                return Err(self.format(format!("expected column `{prefix}{}`, got `{h}`", i + 1)));
            }
        }
        if rest.is_empty() {
            return Err(self.format(format!("no `{prefix}` columns")));
        }
        Ok(rest.len())
    }

    fn format(&self, msg: String) -> IoError {
        IoError::Format {
            path: self.path.clone(),
            msg,
        }
    }

    fn parse_err(&self, line: u64, msg: String) -> IoError {
        IoError::Parse {
            path: self.path.clone(),
            line,
            msg,
        }
    }

    fn cell<'a>(&self, line: u64, rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
        rec.get(i)
            .ok_or_else(|| self.parse_err(line, format!("expected {} fields", self.header.len())))
    }

    fn number(&self, line: u64, rec: &csv::StringRecord, i: usize) -> Result<f64> {
        let s = self.cell(line, rec, i)?;
        let v: f64 = s
            .parse()
            .map_err(|_| self.parse_err(line, format!("`{s}` in column `{}` is not a number", self.header[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.parse_err(line, format!("non-finite value in column `{}`", self.header[i])))
        }
    }

    fn optional(&self, line: u64, rec: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
        if self.cell(line, rec, i)?.is_empty() {
            Ok(None)
        } else {
            self.number(line, rec, i).map(Some)
        }
    }

    fn index(&self, line: u64, rec: &csv::StringRecord, i: usize) -> Result<usize> {
        let s = self.cell(line, rec, i)?;
        match s.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(self.parse_err(line, format!("`{s}` is not a 1-based index"))),
        }
    }
}

/// Zero-padded ids `1..=n`, so text order matches numeric order.
pub fn default_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("{i:0width$}")).collect()
}

fn check_ids(path: &FsPath, ids: &[String], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(IoError::Format {
            path: path.into(),
            msg: format!("{} ids for {n} units", ids.len()),
        });
    }
    Ok(())
}

pub fn write_paths_csv(path: &FsPath, ids: &[String], paths: &[Path]) -> Result<()> {
    check_ids(path, ids, paths.len())?;
    let p = paths.first().map_or(1, Path::channels);
    let header = std::iter::once("unit_id,t".to_string())
        .chain((1..=p).map(|c| format!("x{c}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows = ids.iter().zip(paths).flat_map(|(id, path)| {
        path.times().iter().enumerate().map(move |(k, t)| {
            let mut line = format!("{id},{}", fmt_f64(*t));
            for v in path.value(k) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            line
        })
    });
    write_lines(path, &header, rows)
}

/// Reads a path CSV; empty cells are filled by linear interpolation. Units
/// are returned in order of first appearance.
/// One time stamp with possibly missing channel values.
type RawRow = (f64, Vec<Option<f64>>);

pub fn read_paths_csv(path: &FsPath) -> Result<(Vec<String>, Vec<Path>)> {
    let table = Table::read(path)?;
    table.expect_prefix(&["unit_id", "t"])?;
    let p = table.numbered(2, "x")?;
    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, Vec<RawRow>> = HashMap::new();
    for (line, rec) in &table.rows {
        let id = table.cell(*line, rec, 0)?.to_string();
        if id.is_empty() {
            return Err(table.parse_err(*line, "empty unit_id".into()));
        }
        let t = table.number(*line, rec, 1)?;
        let vals = (0..p)
            .map(|c| table.optional(*line, rec, 2 + c))
            .collect::<Result<Vec<_>>>()?;
        raw.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, vals));
    }
    let paths = order
        .iter()
        .map(|id| {
            interpolate_missing(&raw[id]).map_err(|source| IoError::Path {
                path: path.into(),
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((order, paths))
}

pub fn write_coords_csv(path: &FsPath, ids: &[String], coords: &[[f64; 2]]) -> Result<()> {
    check_ids(path, ids, coords.len())?;
    let rows = ids
        .iter()
        .zip(coords)
        .map(|(id, c)| format!("{id},{},{}", fmt_f64(c[0]), fmt_f64(c[1])));
    write_lines(path, "unit_id,sx,sy", rows)
}

pub fn read_coords_csv(path: &FsPath) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let table = Table::read(path)?;
    table.expect_prefix(&["unit_id", "sx", "sy"])?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (line, rec) in &table.rows {
        ids.push(table.cell(*line, rec, 0)?.to_string());
        coords.push([table.number(*line, rec, 1)?, table.number(*line, rec, 2)?]);
    }
    Ok((ids, coords))
}

/// Writes an `n × Q` matrix with header `unit_id,{prefix}1..{prefix}Q`.
pub fn write_matrix_csv(path: &FsPath, ids: &[String], prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    check_ids(path, ids, m.nrows())?;
    let header = std::iter::once("unit_id".to_string())
        .chain((1..=m.ncols()).map(|c| format!("{prefix}{c}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows = ids.iter().enumerate().map(|(i, id)| {
        let mut line = id.clone();
        for v in m.row(i).iter() {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        line
    });
    write_lines(path, &header, rows)
}

pub fn read_matrix_csv(path: &FsPath, prefix: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = Table::read(path)?;
    table.expect_prefix(&["unit_id"])?;
    let q = table.numbered(1, prefix)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in &table.rows {
        ids.push(table.cell(*line, rec, 0)?.to_string());
        for c in 0..q {
            data.push(table.number(*line, rec, 1 + c)?);
        }
    }
    Ok((ids.clone(), DMatrix::from_row_slice(ids.len(), q, &data)))
}

pub fn write_y_csv(path: &FsPath, ids: &[String], y: &DMatrix<f64>) -> Result<()> {
    write_matrix_csv(path, ids, "y", y)
}

pub fn read_y_csv(path: &FsPath) -> Result<(Vec<String>, DMatrix<f64>)> {
    read_matrix_csv(path, "y")
}

/// COO triples with 1-based indices.
pub fn write_weights_csv(path: &FsPath, w: &SpatialWeights) -> Result<()> {
    let rows = w
        .triplets()
        .map(|(i, j, v)| format!("{},{},{}", i + 1, j + 1, fmt_f64(v)));
    write_lines(path, "i,j,w", rows)
}

pub fn read_weights_csv(path: &FsPath, n: usize, row_normalized: bool) -> Result<SpatialWeights> {
    let table = Table::read(path)?;
    table.expect_prefix(&["i", "j", "w"])?;
    let mut triples = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let i = table.index(*line, rec, 0)?;
        let j = table.index(*line, rec, 1)?;
        triples.push((i - 1, j - 1, table.number(*line, rec, 2)?));
    }
    SpatialWeights::from_triplets(n, triples, row_normalized).map_err(|source| IoError::Spatial {
        path: path.into(),
        source,
    })
}

pub fn write_criterion_csv(path: &FsPath, table: &[CriterionRow]) -> Result<()> {
    let rows = table.iter().map(|r| {
        format!(
            "{},{},{},{}",
            r.m,
            fmt_f64(r.l_hat),
            fmt_f64(r.pen),
            fmt_f64(r.criterion)
        )
    });
    write_lines(path, "m,L_hat,pen,criterion", rows)
}

pub fn read_criterion_csv(path: &FsPath) -> Result<Vec<CriterionRow>> {
    let table = Table::read(path)?;
    table.expect_prefix(&["m", "L_hat", "pen", "criterion"])?;
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(CriterionRow {
                m: table.index(*line, rec, 0)?,
                l_hat: table.number(*line, rec, 1)?,
                pen: table.number(*line, rec, 2)?,
                criterion: table.number(*line, rec, 3)?,
            })
        })
        .collect()
}

/// Positions of `ids` within `reference`; every id must appear exactly once.
pub fn align_ids(path: &FsPath, reference: &[String], ids: &[String]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != ids.len() {
        return Err(IoError::Format {
            path: path.into(),
            msg: "duplicate unit_id".into(),
        });
    }
    if ids.len() != reference.len() {
        return Err(IoError::Format {
            path: path.into(),
            msg: format!("{} units, expected {}", ids.len(), reference.len()),
        });
    }
    reference
        .iter()
        .map(|id| {
            index.get(id.as_str()).copied().ok_or_else(|| IoError::Format {
                path: path.into(),
                msg: format!("unit `{id}` missing"),
            })
        })
        .collect()
}

pub const COORDS_FILE: &str = "coords.csv";
pub const PATHS_FILE: &str = "paths.csv";
pub const Y_FILE: &str = "y.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

/// Coordinates, paths and responses of one dataset, in coordinate-file
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub paths: Vec<Path>,
    pub y: DMatrix<f64>,
}

impl DataBundle {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn write(&self, dir: &FsPath) -> Result<()> {
        write_coords_csv(&dir.join(COORDS_FILE), &self.ids, &self.coords)?;
        write_paths_csv(&dir.join(PATHS_FILE), &self.ids, &self.paths)?;
        write_y_csv(&dir.join(Y_FILE), &self.ids, &self.y)
    }

    /// Reads a bundle directory; path and response rows are matched to the
    /// coordinate file by `unit_id`.
    pub fn read(dir: &FsPath) -> Result<Self> {
        let (ids, coords) = read_coords_csv(&dir.join(COORDS_FILE))?;
        let paths_file = dir.join(PATHS_FILE);
        let (pids, paths) = read_paths_csv(&paths_file)?;
        let order = align_ids(&paths_file, &ids, &pids)?;
        let paths = order.iter().map(|&k| paths[k].clone()).collect();
        let y_file = dir.join(Y_FILE);
        let (yids, y) = read_y_csv(&y_file)?;
        let order = align_ids(&y_file, &ids, &yids)?;
        let y = y.select_rows(&order);
        Ok(Self { ids, coords, paths, y })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_sort_numerically() {
        let ids = default_ids(12);
        assert_eq!(ids[0], "01");
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
    }

    #[test]
    fn missing_cells_are_interpolated() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.csv");
        std::fs::write(&f, "unit_id,t,x1\na,0,1\na,1,\na,2,3\nb,0,0\nb,1,1\n").unwrap();
        let (ids, paths) = read_paths_csv(&f).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(paths[0].value(1), &[2.0]);
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.csv");
        std::fs::write(&f, "id,x,y\n1,0,0\n").unwrap();
        assert!(matches!(read_coords_csv(&f), Err(IoError::Format { .. })));
    }
}
