//! Dense and tiled matrix storage.
//!
//! A [`TileMatrix`] of order `n` is a `t x t` grid of square `b x b` tiles
//! with `n = b * t`. Only tiles on or below the diagonal are meaningful for
//! symmetric operands; the strictly-upper tiles are carried along verbatim
//! but never touched by generated tasks.

use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix, used for inputs, outputs and residual checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidSize(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::InvalidSize("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(n_rows, n_cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Copies the lower triangle onto the upper one.
    pub fn symmetrize_from_lower(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                self[(i, j)] = self[(j, i)];
            }
        }
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(self.mismatch(rhs));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &r) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    fn mismatch(&self, other: &DenseMatrix) -> Error {
        Error::ShapeMismatch {
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: other.rows,
            right_cols: other.cols,
        }
    }

    /// Reads a matrix from CSV: one row per line, `,` separated.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for record in rdr.records() {
            let record = record?;
            if cols.is_some_and(|c| c != record.len()) {
                return Err(Error::Parse(format!("row {rows} has {} fields", record.len())));
            }
            cols = Some(record.len());
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {rows}: bad number {field:?}")))?;
                data.push(v);
            }
            rows += 1;
        }
        Self::from_row_major(rows, cols.unwrap_or(0), data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.rows {
            wtr.write_record(self.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Largest entrywise absolute difference between two equally shaped matrices.
pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(a.mismatch(b));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `M * M^T + n * I` with `M` uniform on `[0, 1)` from a seeded ChaCha stream.
pub fn generate_spd(n: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::InvalidSize("matrix order must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
    let m = DenseMatrix::from_row_major(n, n, m)?;
    let mut a = m.matmul(&m.transpose())?;
    for i in 0..n {
        a[(i, i)] += n as f64;
    }
    // Exact symmetry regardless of summation details.
    a.symmetrize_from_lower();
    Ok(a)
}

/// Square `b x b` tile stored column-major.
#[derive(Clone, PartialEq)]
pub struct Tile {
    order: usize,
    data: Vec<f64>,
}

impl Tile {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            data: vec![0.0; order * order],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut t = Self::zeros(order);
        for i in 0..order {
            t[(i, i)] = 1.0;
        }
        t
    }

    /// Builds a tile from row-major rows, convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let order = rows.len();
        let mut t = Self::zeros(order);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), order, "tile rows must be square");
            for (j, &v) in row.iter().enumerate() {
                t[(i, j)] = v;
            }
        }
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Column-major view of the tile's entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.order..(j + 1) * self.order]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.order..(j + 1) * self.order]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.order);
        for j in 0..self.order {
            for i in 0..self.order {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.order)
            .map(|i| (0..self.order).map(|j| self[(i, j)]).collect())
            .collect();
        f.debug_struct("Tile").field("rows", &rows).finish()
    }
}

impl std::ops::Index<(usize, usize)> for Tile {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i + j * self.order]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Tile {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i + j * self.order]
    }
}

/// Identity of a matrix taking part in the inversion: the operand `A`
/// and the working arrays `B` and `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixLabel {
    A,
    B,
    C,
}

impl fmt::Display for MatrixLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatrixLabel::A => "A",
            MatrixLabel::B => "B",
            MatrixLabel::C => "C",
        };
        f.write_str(s)
    }
}

/// Address of one tile, the unit of hazard tracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileId {
    pub label: MatrixLabel,
    pub row: usize,
    pub col: usize,
}

impl TileId {
    pub const fn new(label: MatrixLabel, row: usize, col: usize) -> Self {
        Self { label, row, col }
    }

    pub const fn a(row: usize, col: usize) -> Self {
        Self::new(MatrixLabel::A, row, col)
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.label, self.row, self.col)
    }
}

/// Order-`n` matrix stored as a `t x t` grid of `b x b` tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct TileMatrix {
    label: MatrixLabel,
    tile_order: usize,
    tiles_per_dim: usize,
    // row-major grid of tiles
    tiles: Vec<Tile>,
}

impl TileMatrix {
    pub fn zeros(label: MatrixLabel, tile_order: usize, tiles_per_dim: usize) -> Result<Self> {
        if tile_order == 0 || tiles_per_dim == 0 {
            return Err(Error::InvalidSize("tile order and tile count must be positive".into()));
        }
        Ok(Self {
            label,
            tile_order,
            tiles_per_dim,
            tiles: vec![Tile::zeros(tile_order); tiles_per_dim * tiles_per_dim],
        })
    }

    /// Splits a square dense matrix into tiles of order `b`.
    pub fn from_dense(m: &DenseMatrix, b: usize) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::InvalidSize(format!(
                "matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        let n = m.rows;
        if b == 0 || n == 0 || !n.is_multiple_of(b) {
            return Err(Error::InvalidSize(format!(
                "order {n} is not divisible by tile order {b}"
            )));
        }
        let t = n / b;
        let mut out = Self::zeros(MatrixLabel::A, b, t)?;
        for ti in 0..t {
            for tj in 0..t {
                let tile = out.tile_mut(ti, tj);
                for jj in 0..b {
                    let col = tile.col_mut(jj);
                    for (ii, v) in col.iter_mut().enumerate() {
                        *v = m[(ti * b + ii, tj * b + jj)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reassembles the dense matrix, copying every tile verbatim.
    pub fn to_dense(&self) -> DenseMatrix {
        let b = self.tile_order;
        let n = self.order();
        let mut m = DenseMatrix::zeros(n, n);
        for ti in 0..self.tiles_per_dim {
            for tj in 0..self.tiles_per_dim {
                let tile = self.tile(ti, tj);
                for jj in 0..b {
                    for (ii, &v) in tile.col(jj).iter().enumerate() {
                        m[(ti * b + ii, tj * b + jj)] = v;
                    }
                }
            }
        }
        m
    }

    /// Deep copy of the tiles on and below the diagonal under a new label.
    /// Strictly-upper tiles of the copy are zero.
    pub fn copy_lower(&self, label: MatrixLabel) -> Self {
        let t = self.tiles_per_dim;
        let mut tiles = vec![Tile::zeros(self.tile_order); t * t];
        for i in 0..t {
            for j in 0..=i {
                tiles[i * t + j] = self.tile(i, j).clone();
            }
        }
        Self {
            label,
            tile_order: self.tile_order,
            tiles_per_dim: t,
            tiles,
        }
    }

    pub fn label(&self) -> MatrixLabel {
        self.label
    }

    pub fn set_label(&mut self, label: MatrixLabel) {
        self.label = label;
    }

    pub fn order(&self) -> usize {
        self.tile_order * self.tiles_per_dim
    }

    pub fn tile_order(&self) -> usize {
        self.tile_order
    }

    pub fn tiles_per_dim(&self) -> usize {
        self.tiles_per_dim
    }

    pub fn tile(&self, row: usize, col: usize) -> &Tile {
        &self.tiles[row * self.tiles_per_dim + col]
    }

    pub fn tile_mut(&mut self, row: usize, col: usize) -> &mut Tile {
        &mut self.tiles[row * self.tiles_per_dim + col]
    }

    /// Moves the tiles out, in row-major grid order.
    pub(crate) fn into_tiles(self) -> Vec<Tile> {
        self.tiles
    }

    pub(crate) fn from_tiles(
        label: MatrixLabel,
        tile_order: usize,
        tiles_per_dim: usize,
        tiles: Vec<Tile>,
    ) -> Self {
        debug_assert_eq!(tiles.len(), tiles_per_dim * tiles_per_dim);
        Self {
            label,
            tile_order,
            tiles_per_dim,
            tiles,
        }
    }
}
