//! Toy point sets and CSV input/output.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// `n` mutually distinct points in `R^dim`, stored row-major. The row index is
/// the point id.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    coords: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major buffer, rejecting duplicates.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} coordinates is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Csv {
                row: i / dim,
                msg: "non-finite coordinate".into(),
            });
        }
        let data = Dataset { dim, coords };
        if let Some((first, second)) = data.find_duplicate() {
            return Err(Error::DuplicatePoint { first, second });
        }
        Ok(data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Csv {
                row: bad,
                msg: format!("expected {dim} columns, found {}", rows[bad].len()),
            });
        }
        Dataset::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |a: &usize, b: &usize| -> Ordering {
            self.point(*a)
                .iter()
                .zip(self.point(*b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        };
        order.sort_by(cmp);
        order.windows(2).find_map(|w| {
            // -0.0 and 0.0 sort apart under total_cmp but are the same point
            let same = self
                .point(w[0])
                .iter()
                .zip(self.point(w[1]))
                .all(|(x, y)| x == y);
            same.then(|| (w[0].min(w[1]), w[0].max(w[1])))
        })
    }
}

/// `n` points uniform by area on the annulus `radius ± half_width` around the
/// origin.
pub fn gen_ring(n: usize, radius: f64, half_width: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if !(half_width >= 0.0 && radius > half_width && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ring needs radius > half_width >= 0 (radius = {radius}, half_width = {half_width})"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Ring);
    let inner_sq = (radius - half_width).powi(2);
    let outer_sq = (radius + half_width).powi(2);
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        // inverse CDF of the radius under uniform area measure
        let r = (inner_sq + u * (outer_sq - inner_sq)).sqrt();
        coords.push(r * theta.cos());
        coords.push(r * theta.sin());
    }
    Dataset::new(2, coords)
}

/// `n` i.i.d. points uniform on the unit square.
pub fn gen_uniform_square(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let mut rng = rng::stream(seed, Stream::Square);
    let coords = (0..2 * n).map(|_| rng.random::<f64>()).collect();
    Dataset::new(2, coords)
}

/// Reads a rectangular numeric CSV, one point per row. A first row containing
/// any non-numeric cell is taken as a header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            row: line + 1,
            msg: e.to_string(),
        })?;
        let line_no = record.position().map_or(line + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && dim.is_none() => {
                dim = Some(record.len());
                continue;
            }
            Err(e) => {
                return Err(Error::Csv {
                    row: line_no,
                    msg: format!("non-numeric cell ({e})"),
                })
            }
        };
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::Csv {
                row: line_no,
                msg: format!("expected {expected} columns, found {}", values.len()),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Csv {
                row: line_no,
                msg: format!("non-finite value in column {}", bad + 1),
            });
        }
        rows.push(values);
    }
    if rows.len() < 2 {
        return Err(Error::TooFewPoints(rows.len()));
    }
    Dataset::from_rows(&rows)
}

/// Writes the dataset with a `x1,...,xD` header and 17 significant digits per
/// value, so that `load_csv` reproduces it bit for bit.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(data, &mut out).map_err(|e| Error::io(path, e))
}

pub fn write_csv(data: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let header: Vec<String> = (1..=data.dim()).map(|c| format!("x{c}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in data.rows() {
        write_row(out, row)?;
    }
    out.flush()
}

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row(out: &mut impl Write, row: &[f64]) -> std::io::Result<()> {
    let cells: Vec<String> = row.iter().map(|&v| fmt_real(v)).collect();
    writeln!(out, "{}", cells.join(","))
}
