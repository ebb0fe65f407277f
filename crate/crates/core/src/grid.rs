//! Uniform periodic grids and the sampled fields that live on them.
//!
//! A [`Grid`] discretizes the periodic box `[-L, L)^d` with `N` points per
//! axis. A [`GridField`] stores `d^rank` components, each a row-major array
//! of `N^d` samples with axis 0 varying slowest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("points per axis {n} must be a power of two >= 8")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width {half_width} must be positive")));
        }
        Ok(Self { dim, n, half_width })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Grid spacing `h = 2L/N`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Total number of grid points, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d` of a single cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coordinate(&self, index: usize) -> f64 {
        -self.half_width + index as f64 * self.spacing()
    }

    /// Stride of `axis` in the row-major flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Per-axis indices of a flat index.
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    /// Physical coordinates of a flat index; unused slots are zero.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Angular wavenumber of FFT index `m` (Nyquist taken as positive).
    pub fn wavenumber(&self, m: usize) -> f64 {
        let signed = if m <= self.n / 2 { m as f64 } else { m as f64 - self.n as f64 };
        std::f64::consts::PI * signed / self.half_width
    }

    /// Wavenumber used by odd-order derivatives: the Nyquist mode is dropped
    /// so that derivatives of real fields stay real.
    pub fn odd_wavenumber(&self, m: usize) -> f64 {
        if m == self.n / 2 {
            0.0
        } else {
            self.wavenumber(m)
        }
    }
}

/// A sampled scalar (rank 0), vector (rank 1) or matrix (rank 2) field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    rank: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, rank: usize, values: Vec<f64>) -> Result<Self> {
        if rank > 2 {
            return Err(Error::InvalidField(format!("rank {rank} not supported")));
        }
        let expected = grid.dim().pow(rank as u32) * grid.len();
        if values.len() != expected {
            return Err(Error::InvalidField(format!("expected {expected} values, found {}", values.len())));
        }
        let field = Self { grid, rank, values };
        field.check_finite("construction")?;
        Ok(field)
    }

    pub(crate) fn from_raw(grid: Grid, rank: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.dim().pow(rank as u32) * grid.len());
        Self { grid, rank, values }
    }

    pub fn zeros(grid: Grid, rank: usize) -> Self {
        let len = grid.dim().pow(rank as u32) * grid.len();
        Self { grid, rank, values: vec![0.0; len] }
    }

    pub fn constant_scalar(grid: Grid, value: f64) -> Self {
        Self { grid, rank: 0, values: vec![value; grid.len()] }
    }

    pub fn from_scalar_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.point(i)[..d])).collect();
        Self::new(grid, 0, values)
    }

    /// Builds a vector field; `f` writes the `d` components at point `x`.
    pub fn from_vector_fn(grid: Grid, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let d = grid.dim();
        let len = grid.len();
        let mut values = vec![0.0; d * len];
        let mut out = [0.0; 3];
        for i in 0..len {
            f(&grid.point(i)[..d], &mut out[..d]);
            for c in 0..d {
                values[c * len + i] = out[c];
            }
        }
        Self::new(grid, 1, values)
    }

    pub fn from_components(grid: Grid, rank: usize, components: Vec<Vec<f64>>) -> Result<Self> {
        let values = components.into_iter().flatten().collect();
        Self::new(grid, rank, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_components(&self) -> usize {
        self.grid.dim().pow(self.rank as u32)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.values[c * len..(c + 1) * len]
    }

    /// Component `c` as a scalar field.
    pub fn component_field(&self, c: usize) -> GridField {
        Self::from_raw(self.grid, 0, self.component(c).to_vec())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    pub fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank == rank {
            Ok(())
        } else {
            Err(Error::RankMismatch { expected: rank, found: self.rank })
        }
    }

    fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        other.expect_rank(self.rank)
    }

    pub fn scaled(&self, c: f64) -> GridField {
        Self::from_raw(self.grid, self.rank, self.values.iter().map(|v| c * v).collect())
    }

    /// `a*self + b*other`.
    pub fn lin_comb(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self::from_raw(self.grid, self.rank, values))
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.lin_comb(1.0, other, -1.0)
    }

    /// Pointwise product of two scalar fields.
    pub fn mul(&self, other: &GridField) -> Result<GridField> {
        self.expect_rank(0)?;
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x * y).collect();
        Ok(Self::from_raw(self.grid, 0, values))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest pointwise Euclidean length across components.
    pub fn max_magnitude(&self) -> f64 {
        let len = self.grid.len();
        let nc = self.num_components();
        (0..len).map(|i| (0..nc).map(|c| self.values[c * len + i].powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Midpoint-rule `L^2` norm over the box, summed across components.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Box average of each component.
    pub fn mean(&self, c: usize) -> f64 {
        let comp = self.component(c);
        comp.iter().sum::<f64>() / comp.len() as f64
    }

    pub fn l2_distance(&self, other: &GridField) -> Result<f64> {
        Ok(self.sub(other)?.l2_norm())
    }

    /// Writes the flat little-endian binary layout plus a JSON sidecar next
    /// to it (same stem, `.json` extension).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.encode())?;
        out.flush()?;
        let header = FieldHeader::of(self);
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    /// Header `(dim, N, L, rank)` as four little-endian 64-bit words
    /// (`L` as `f64`, the rest as `u64`), then the component-major payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(32 + 8 * self.values.len());
        bytes.extend_from_slice(&(self.grid.dim() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.grid.points_per_axis() as u64).to_le_bytes());
        bytes.extend_from_slice(&self.grid.half_width().to_le_bytes());
        bytes.extend_from_slice(&(self.rank as u64).to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 || bytes.len() % 8 != 0 {
            return Err(Error::InvalidField(format!("truncated field encoding ({} bytes)", bytes.len())));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
        let dim = u64::from_le_bytes(word(0)) as usize;
        let n = u64::from_le_bytes(word(1)) as usize;
        let half_width = f64::from_le_bytes(word(2));
        let rank = u64::from_le_bytes(word(3)) as usize;
        let grid = Grid::new(dim, n, half_width)?;
        let values = (4..bytes.len() / 8).map(|i| f64::from_le_bytes(word(i))).collect();
        Self::new(grid, rank, values)
    }
}

/// JSON sidecar describing a binary field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub rank: usize,
}

impl FieldHeader {
    pub fn of(field: &GridField) -> Self {
        Self {
            dim: field.grid.dim(),
            n: field.grid.points_per_axis(),
            half_width: field.grid.half_width(),
            rank: field.rank,
        }
    }
}
