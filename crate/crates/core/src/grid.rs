//! Field representation, CSV grid I/O and target positions.
//!
//! Logical lattice indices are 1-based, `i ∈ [1, n]` and `j ∈ [1, m]`, so that
//! `X_i^(j)` sits at lattice point `(i/n, j/m)`. Storage is a 0-based
//! row-major `ndarray::Array2`; the offset is applied only in [`Field::get`]
//! and the window helpers that take logical indices.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{BoundaryViolation, Error, Result};

/// An `n × m` grid of finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Array2<f64>,
}

impl Field {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::Empty);
        }
        if let Some(((r, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row: r + 1, col: c + 1 });
        }
        Ok(Self { values })
    }

    /// Builds a field from a function of the logical indices `(i, j)`.
    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((n, m), |(r, c)| f(r + 1, c + 1)))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    /// `X_i^(j)` with 1-based logical indices.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i - 1, j - 1]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// The sub-field on logical rows `i0..i0+rows` and columns `j0..j0+cols`.
    pub fn block(&self, i0: usize, j0: usize, rows: usize, cols: usize) -> Result<Self> {
        if i0 == 0 || j0 == 0 || i0 + rows - 1 > self.n() || j0 + cols - 1 > self.m() {
            return Err(Error::Shape {
                expected: format!("block inside {}x{}", self.n(), self.m()),
                found: format!("rows {}..{}, cols {}..{}", i0, i0 + rows, j0, j0 + cols),
            });
        }
        Self::new(
            self.values
                .slice(ndarray::s![i0 - 1..i0 - 1 + rows, j0 - 1..j0 - 1 + cols])
                .to_owned(),
        )
    }
}

/// Reads a headerless rectangular CSV grid; row `r`, column `c` holds `X_r^(c)`.
pub fn load_grid_csv(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::NotFound(path.into())),
        Err(e) => return Err(e.into()),
    };
    parse_grid_csv(&text)
}

pub fn parse_grid_csv(text: &str) -> Result<Field> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Io(std::io::Error::new(ErrorKind::InvalidData, e)))?;
        let row = rows + 1;
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format {
                    row,
                    expected: w,
                    found: record.len(),
                })
            }
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                text: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: c + 1 });
            }
            data.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or(Error::Empty)?;
    if width == 0 {
        return Err(Error::Empty);
    }
    let values = Array2::from_shape_vec((rows, width), data).expect("rectangular by construction");
    Field::new(values)
}

/// Shortest round-trip formatting; exponent form only for extreme magnitudes.
pub(crate) fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn grid_to_csv(values: &Array2<f64>) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn save_grid_csv(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, grid_to_csv(field.values()))?;
    Ok(())
}

/// Floor of `n·x`, snapping to the nearest integer when `n·x` is within a few
/// ulps of it so that `x = p/n` maps back to `p`.
fn anchor(x: f64, n: usize) -> usize {
    let t = n as f64 * x;
    let r = t.round();
    if (t - r).abs() <= 8.0 * f64::EPSILON * t.abs().max(1.0) {
        r as usize
    } else {
        t.floor() as usize
    }
}

/// A target location `(x, y) ∈ [0,1]²` and its lattice anchor
/// `p = ⌊n·x⌋`, `q = ⌊m·y⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub p: usize,
    pub q: usize,
}

impl Position {
    pub fn new(x: f64, y: f64, n: usize, m: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "position ({x}, {y}) outside the unit square"
            )));
        }
        Ok(Self {
            x,
            y,
            p: anchor(x, n),
            q: anchor(y, m),
        })
    }

    /// The lattice point `(p/n, q/m)`.
    pub fn at_lattice(p: usize, q: usize, n: usize, m: usize) -> Self {
        Self {
            x: p as f64 / n as f64,
            y: q as f64 / m as f64,
            p,
            q,
        }
    }
}

/// The ordered list of `V` target positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionGrid {
    positions: Vec<Position>,
}

impl PositionGrid {
    pub fn new(positions: Vec<Position>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("position grid is empty".into()));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Position> {
        self.positions.iter()
    }
}

fn spaced_anchors(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![(lo + hi) / 2];
    }
    let step = (hi - lo) as f64 / (count - 1) as f64;
    (0..count)
        .map(|a| lo + (a as f64 * step).round() as usize)
        .collect()
}

/// A `gv × gv` grid of lattice positions spread evenly over the admissible
/// interior `[2𝒦+1, n−2𝒦] × [2𝒦+1, m−2𝒦]`, ordered row by row.
pub fn make_position_grid(n: usize, m: usize, k: usize, gv: usize) -> Result<PositionGrid> {
    if gv == 0 {
        return Err(Error::InvalidArgument("grid divisions must be at least 1".into()));
    }
    if n < 4 * k + 2 || m < 4 * k + 2 {
        return Err(Error::BandwidthTooLarge { k, n, m });
    }
    let ps = spaced_anchors(2 * k + 1, n - 2 * k, gv);
    let qs = spaced_anchors(2 * k + 1, m - 2 * k, gv);
    let positions = ps
        .iter()
        .flat_map(|&p| qs.iter().map(move |&q| Position::at_lattice(p, q, n, m)))
        .collect();
    PositionGrid::new(positions)
}

/// Checks `2𝒦+1 ≤ p_v ≤ n−2𝒦` and `2𝒦+1 ≤ q_v ≤ m−2𝒦` for every position.
/// Offending positions are reported, never clamped.
pub fn validate_positions(grid: &PositionGrid, n: usize, m: usize, k: usize) -> Result<()> {
    let ok = |a: usize, len: usize| a > 2 * k && a + 2 * k <= len;
    let bad: Vec<BoundaryViolation> = grid
        .iter()
        .enumerate()
        .filter(|(_, pos)| !(ok(pos.p, n) && ok(pos.q, m)))
        .map(|(index, pos)| BoundaryViolation {
            index,
            p: pos.p,
            q: pos.q,
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Boundary(bad))
    }
}
