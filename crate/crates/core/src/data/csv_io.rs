use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A column picked by header name or zero-based index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    /// All-digit strings are indices, anything else is a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

impl ColumnRef {
    fn resolve(&self, header: &[String], width: usize, has_header: bool) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < width => Ok(*i),
            ColumnRef::Index(i) => Err(Error::Config(format!("column index {i} is out of range ({width} columns)"))),
            ColumnRef::Name(n) if has_header => header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Config(format!("no column named '{n}'"))),
            ColumnRef::Name(n) => Err(Error::Config(format!(
                "column '{n}' selected by name but the file has no header"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_names: Vec<String>,
    /// Group label per row, for leave-one-group-out evaluation.
    pub groups: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, feature_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            groups: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Default names `x0, x1, …`.
    pub fn default_names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("x{j}")).collect()
    }
}

/// Reads a numeric CSV from a file. Data rows are numbered from 1, not
/// counting the header, in error messages.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    target: &ColumnRef,
    group: Option<&ColumnRef>,
    has_header: bool,
) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, target, group, has_header)
}

pub fn read_csv<R: Read>(reader: R, target: &ColumnRef, group: Option<&ColumnRef>, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = if has_header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec?);
    }
    let width = if has_header {
        header.len()
    } else {
        records.first().map_or(0, |r| r.len())
    };
    let t = target.resolve(&header, width, has_header)?;
    let g = group.map(|c| c.resolve(&header, width, has_header)).transpose()?;
    if g == Some(t) {
        return Err(Error::Config("target and group columns must differ".into()));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&j| j != t && Some(j) != g).collect();
    let feature_names = if has_header {
        feature_cols.iter().map(|&j| header[j].clone()).collect()
    } else {
        Dataset::default_names(feature_cols.len())
    };
    let column_label = |j: usize| {
        if has_header {
            header[j].clone()
        } else {
            j.to_string()
        }
    };

    let n = records.len();
    let mut x = Array2::zeros((n, feature_cols.len()));
    let mut y = Array1::zeros(n);
    let mut groups = g.map(|_| Vec::with_capacity(n));
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        if rec.len() != width {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let parse = |j: usize| -> Result<f64> {
            let cell = &rec[j];
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: column_label(j),
                    message: format!("'{cell}' is not a finite number"),
                }),
            }
        };
        for (c, &j) in feature_cols.iter().enumerate() {
            x[[i, c]] = parse(j)?;
        }
        y[i] = parse(t)?;
        if let (Some(gs), Some(gj)) = (groups.as_mut(), g) {
            gs.push(rec[gj].to_string());
        }
    }
    let mut ds = Dataset::new(x, y, feature_names)?;
    ds.groups = groups;
    Ok(ds)
}

/// Reads a feature matrix for inference. With a header and `names`, the
/// named columns are taken in that order and any others are ignored;
/// otherwise every column is a feature, in file order.
pub fn read_features<R: Read>(reader: R, names: Option<&[String]>, has_header: bool) -> Result<(Array2<f64>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = if has_header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec?);
    }
    let width = if has_header {
        header.len()
    } else {
        records.first().map_or(0, |r| r.len())
    };
    let (cols, feature_names) = match (names, has_header) {
        (Some(names), true) => {
            let cols = names
                .iter()
                .map(|n| ColumnRef::Name(n.clone()).resolve(&header, width, true))
                .collect::<Result<Vec<_>>>()?;
            (cols, names.to_vec())
        }
        (_, true) => ((0..width).collect(), header.clone()),
        (_, false) => ((0..width).collect(), Dataset::default_names(width)),
    };
    let mut x = Array2::zeros((records.len(), cols.len()));
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                row: i + 1,
                column: "*".into(),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, &j) in cols.iter().enumerate() {
            x[[i, c]] = match rec[j].parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: if has_header { header[j].clone() } else { j.to_string() },
                        message: format!("'{}' is not a finite number", &rec[j]),
                    })
                }
            };
        }
    }
    Ok((x, feature_names))
}

pub fn ingest_features(path: impl AsRef<Path>, names: Option<&[String]>, has_header: bool) -> Result<(Array2<f64>, Vec<String>)> {
    read_features(File::open(path.as_ref())?, names, has_header)
}

/// Writes features followed by a `target` column, with a header.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(File::create(path.as_ref())?);
    let mut header = data.feature_names.clone();
    header.push("target".into());
    out.write_record(&header)?;
    for (row, y) in data.x.rows().into_iter().zip(&data.y) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{y:?}"));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
