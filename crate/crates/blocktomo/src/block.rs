//! Sparse system-matrix blocks in compressed-sparse-row form.
//!
//! A block holds the rows of the system matrix restricted to one row index
//! set `I` and one column index set `J`, with column indices remapped to
//! block-local positions.  Forward and transposed products exist in full and
//! row-masked variants; the masked variants take local row positions so
//! importance-sampled epochs touch only the rows of the selected detector
//! tiles.  `forward_block` and `back_block` are the cluster-visible
//! entry points: they validate shapes and record one task on the ledger.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::ledger::{CostLedger, TaskEvent, TaskKind};
use crate::siddon::siddon_trace;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SparseBlock {
    /// Global row indices I, ascending.
    row_ids: Vec<usize>,
    /// Global column indices J, ascending.
    col_ids: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

fn check_index_set(ids: &[usize], bound: usize, what: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::InvalidPartition(format!("{what} index set is empty")));
    }
    for w in ids.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidPartition(format!(
                "{what} indices must be strictly ascending (duplicate or disorder at {})",
                w[1]
            )));
        }
    }
    if *ids.last().unwrap() >= bound {
        return Err(Error::InvalidPartition(format!(
            "{what} index {} out of bounds {bound}",
            ids.last().unwrap()
        )));
    }
    Ok(())
}

impl SparseBlock {
    /// Build from global index sets and per-row entry lists with block-local
    /// column indices (strictly ascending, in range, finite, nonnegative).
    pub fn from_parts(
        row_ids: Vec<usize>,
        col_ids: Vec<usize>,
        rows: &[Vec<(usize, f64)>],
    ) -> Result<Self> {
        if rows.len() != row_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} entry rows for {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        let ncols = col_ids.len();
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (ri, row) in rows.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for &(c, v) in row {
                if c >= ncols {
                    return Err(Error::DimensionMismatch(format!(
                        "row {ri}: column {c} outside block width {ncols}"
                    )));
                }
                if prev.is_some_and(|p| p >= c) {
                    return Err(Error::DimensionMismatch(format!(
                        "row {ri}: columns must be strictly ascending"
                    )));
                }
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::DimensionMismatch(format!(
                        "row {ri}: intersection lengths must be finite and nonnegative, got {v}"
                    )));
                }
                prev = Some(c);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseBlock { row_ids, col_ids, row_ptr, col_idx, values })
    }

    /// Synthetic block with identity index sets `0..rows`, `0..ncols`.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        Self::from_parts((0..rows.len()).collect(), (0..ncols).collect(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    /// Entries of one local row as (local column, value) pairs.
    pub fn row_entries(&self, local_row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[local_row]..self.row_ptr[local_row + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Block-vector product; `x` has block-local length.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols(), "input length must match block width");
        (0..self.nrows()).map(|r| self.row_dot(r, x)).collect()
    }

    /// Product restricted to the given local rows, in their given order.
    pub fn forward_masked(&self, local_rows: &[usize], x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols(), "input length must match block width");
        local_rows.iter().map(|&r| self.row_dot(r, x)).collect()
    }

    /// Transposed product; `r` has block-local row length.
    pub fn back(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.nrows(), "input length must match block height");
        let mut out = vec![0.0; self.ncols()];
        for (row, &rv) in r.iter().enumerate() {
            if rv == 0.0 {
                continue;
            }
            for (c, v) in self.row_entries(row) {
                out[c] += v * rv;
            }
        }
        out
    }

    /// Transposed product over the given local rows; `r_vals[k]` pairs with
    /// `local_rows[k]`.
    pub fn back_masked(&self, local_rows: &[usize], r_vals: &[f64]) -> Vec<f64> {
        assert_eq!(local_rows.len(), r_vals.len(), "one value per masked row");
        let mut out = vec![0.0; self.ncols()];
        for (&row, &rv) in local_rows.iter().zip(r_vals) {
            if rv == 0.0 {
                continue;
            }
            for (c, v) in self.row_entries(row) {
                out[c] += v * rv;
            }
        }
        out
    }

    fn row_dot(&self, row: usize, x: &[f64]) -> f64 {
        self.row_entries(row).map(|(c, v)| v * x[c]).sum()
    }

    /// Dense row-major copy for small oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.nrows() * self.ncols()];
        for row in 0..self.nrows() {
            for (c, v) in self.row_entries(row) {
                dense[row * self.ncols() + c] = v;
            }
        }
        dense
    }
}

/// Trace the rows `I` of the system matrix and keep the columns `J`.
///
/// Index sets must be non-empty, strictly ascending, and in bounds; rows
/// whose rays miss the selected tile are present but empty.
pub fn assemble_block(geom: &Geometry, i_set: &[usize], j_set: &[usize]) -> Result<SparseBlock> {
    check_index_set(i_set, geom.num_rays(), "row")?;
    check_index_set(j_set, geom.num_voxels(), "column")?;
    // Global-to-local column map; dense lookup is fine at these sizes.
    let mut col_map: Vec<Option<usize>> = vec![None; geom.num_voxels()];
    for (local, &c) in j_set.iter().enumerate() {
        col_map[c] = Some(local);
    }
    let rows: Vec<Vec<(usize, f64)>> = i_set
        .par_iter()
        .map(|&ray| {
            siddon_trace(geom, ray)
                .into_iter()
                .filter_map(|(c, len)| col_map[c].map(|local| (local, len)))
                .collect()
        })
        .collect();
    SparseBlock::from_parts(i_set.to_vec(), j_set.to_vec(), &rows)
}

/// Ship a forward task to a node: validate, record, multiply.
pub fn forward_block(block: &SparseBlock, x_j: &[f64], ledger: &CostLedger) -> Result<Vec<f64>> {
    if x_j.len() != block.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "image tile length {} does not match block width {}",
            x_j.len(),
            block.ncols()
        )));
    }
    ledger.record(TaskEvent {
        kind: TaskKind::Forward,
        rows: block.nrows(),
        cols: block.ncols(),
    });
    Ok(block.forward(x_j))
}

/// Ship a transposed task to a node: validate, record, multiply.
pub fn back_block(block: &SparseBlock, r_i: &[f64], ledger: &CostLedger) -> Result<Vec<f64>> {
    if r_i.len() != block.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "residual slice length {} does not match block height {}",
            r_i.len(),
            block.nrows()
        )));
    }
    ledger.record(TaskEvent {
        kind: TaskKind::Back,
        rows: block.nrows(),
        cols: block.ncols(),
    });
    Ok(block.back(r_i))
}

/// Forward task restricted to masked local rows (one task, fewer rows moved).
pub fn forward_block_rows(
    block: &SparseBlock,
    local_rows: &[usize],
    x_j: &[f64],
    ledger: &CostLedger,
) -> Result<Vec<f64>> {
    if x_j.len() != block.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "image tile length {} does not match block width {}",
            x_j.len(),
            block.ncols()
        )));
    }
    ledger.record(TaskEvent {
        kind: TaskKind::Forward,
        rows: local_rows.len(),
        cols: block.ncols(),
    });
    Ok(block.forward_masked(local_rows, x_j))
}

/// Transposed task restricted to masked local rows.
pub fn back_block_rows(
    block: &SparseBlock,
    local_rows: &[usize],
    r_vals: &[f64],
    ledger: &CostLedger,
) -> Result<Vec<f64>> {
    if r_vals.len() != local_rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residual values for {} masked rows",
            r_vals.len(),
            local_rows.len()
        )));
    }
    ledger.record(TaskEvent {
        kind: TaskKind::Back,
        rows: local_rows.len(),
        cols: block.ncols(),
    });
    Ok(block.back_masked(local_rows, r_vals))
}
