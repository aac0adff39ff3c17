//! The partitioned system matrix and whole-system products.
//!
//! `BlockSystem` owns the geometry, the block partition, and (in explicit
//! mode) every assembled block.  The on-demand mode re-traces blocks at each
//! use and exists to mirror production settings where the matrix is never
//! stored; both modes produce bitwise-identical results.
//!
//! The whole-system products fix their block iteration orders to match the
//! solver's memory updates exactly: residuals subtract per-column-block
//! partial projections in ascending column-block order, and gradient
//! directions add per-row-block contributions in ascending row-block order.
//! Baselines built on these products therefore agree with degenerate block
//! solver configurations to the last bit, which the equivalence tests rely
//! on.

use crate::block::{assemble_block, SparseBlock};
use crate::error::Result;
use crate::geometry::Geometry;
use crate::partition::BlockPartition;
use rayon::prelude::*;
use std::borrow::Cow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageMode {
    /// All blocks assembled once and kept in memory.
    Explicit,
    /// Blocks re-traced on every access.
    OnDemand,
}

#[derive(Debug)]
pub struct BlockSystem {
    geom: Geometry,
    partition: BlockPartition,
    mode: StorageMode,
    /// blocks[i][j] in explicit mode, empty otherwise.
    blocks: Vec<Vec<SparseBlock>>,
}

impl BlockSystem {
    pub fn build(geom: Geometry, partition: BlockPartition, mode: StorageMode) -> Result<Self> {
        partition.validate(&geom)?;
        let blocks = match mode {
            StorageMode::OnDemand => Vec::new(),
            StorageMode::Explicit => {
                // One trace per ray, bucketed by column block; equals
                // per-block assembly but avoids re-tracing rows N times.
                let mut col_map: Vec<(usize, usize)> = vec![(0, 0); geom.num_voxels()];
                for (j, cols) in partition.col_blocks.iter().enumerate() {
                    for (local, &c) in cols.iter().enumerate() {
                        col_map[c] = (j, local);
                    }
                }
                let n = partition.num_col_blocks();
                partition
                    .row_blocks
                    .iter()
                    .enumerate()
                    .map(|(_, rows)| {
                        let per_row: Vec<Vec<Vec<(usize, f64)>>> = rows
                            .par_iter()
                            .map(|&ray| {
                                let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
                                for (c, len) in crate::siddon::siddon_trace(&geom, ray) {
                                    let (j, local) = col_map[c];
                                    buckets[j].push((local, len));
                                }
                                buckets
                            })
                            .collect();
                        (0..n)
                            .map(|j| {
                                let entries: Vec<Vec<(usize, f64)>> =
                                    per_row.iter().map(|b| b[j].clone()).collect();
                                SparseBlock::from_parts(
                                    rows.clone(),
                                    partition.col_blocks[j].clone(),
                                    &entries,
                                )
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(BlockSystem { geom, partition, mode, blocks })
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.geom.num_rays()
    }

    pub fn cols(&self) -> usize {
        self.geom.num_voxels()
    }

    pub fn row_blocks(&self) -> usize {
        self.partition.num_row_blocks()
    }

    pub fn col_blocks(&self) -> usize {
        self.partition.num_col_blocks()
    }

    /// Fetch (or re-trace) block (i, j).
    pub fn block(&self, i: usize, j: usize) -> Cow<'_, SparseBlock> {
        match self.mode {
            StorageMode::Explicit => Cow::Borrowed(&self.blocks[i][j]),
            StorageMode::OnDemand => Cow::Owned(
                assemble_block(
                    &self.geom,
                    &self.partition.row_blocks[i],
                    &self.partition.col_blocks[j],
                )
                .expect("partition was validated at construction"),
            ),
        }
    }

    /// Image restricted to column block j, in block-local order.
    pub fn gather_cols(&self, x: &[f64], j: usize) -> Vec<f64> {
        self.partition.col_blocks[j].iter().map(|&c| x[c]).collect()
    }

    /// Row vector restricted to row block i, in block-local order.
    pub fn gather_rows(&self, v: &[f64], i: usize) -> Vec<f64> {
        self.partition.row_blocks[i].iter().map(|&r| v[r]).collect()
    }

    /// Add `vals` into `target` at the global columns of block j.
    pub fn scatter_cols(&self, target: &mut [f64], vals: &[f64], j: usize) {
        for (pos, &c) in self.partition.col_blocks[j].iter().enumerate() {
            target[c] += vals[pos];
        }
    }

    /// y - Ax, subtracting per-column-block partials in ascending j order.
    pub fn residual(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        assert_eq!(y.len(), self.rows());
        let mut r = y.to_vec();
        for j in 0..self.col_blocks() {
            let xj = self.gather_cols(x, j);
            for i in 0..self.row_blocks() {
                let vals = self.block(i, j).forward(&xj);
                for (pos, &row) in self.partition.row_blocks[i].iter().enumerate() {
                    r[row] -= vals[pos];
                }
            }
        }
        r
    }

    /// 2 A^T r, adding per-row-block contributions in ascending i order.
    pub fn gradient_dir(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows());
        let mut g = vec![0.0; self.cols()];
        for i in 0..self.row_blocks() {
            let ri = self.gather_rows(r, i);
            for j in 0..self.col_blocks() {
                let mut vals = self.block(i, j).back(&ri);
                double_in_place(&mut vals);
                self.scatter_cols(&mut g, &vals, j);
            }
        }
        g
    }

    /// Ax via block sums (ascending j, then i).
    pub fn full_forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut out = vec![0.0; self.rows()];
        for j in 0..self.col_blocks() {
            let xj = self.gather_cols(x, j);
            for i in 0..self.row_blocks() {
                let vals = self.block(i, j).forward(&xj);
                for (pos, &row) in self.partition.row_blocks[i].iter().enumerate() {
                    out[row] += vals[pos];
                }
            }
        }
        out
    }

    /// A^T r via block sums (unscaled).
    pub fn full_back(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows());
        let mut out = vec![0.0; self.cols()];
        for i in 0..self.row_blocks() {
            let ri = self.gather_rows(r, i);
            for j in 0..self.col_blocks() {
                let vals = self.block(i, j).back(&ri);
                self.scatter_cols(&mut out, &vals, j);
            }
        }
        out
    }

    /// Row sums of A (for simultaneous-iteration weights).
    pub fn row_sums(&self) -> Vec<f64> {
        self.full_forward(&vec![1.0; self.cols()])
    }

    /// Column sums of A.
    pub fn col_sums(&self) -> Vec<f64> {
        self.full_back(&vec![1.0; self.rows()])
    }

    /// Nonzero count per column of A.
    pub fn column_nnz_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.cols()];
        for i in 0..self.row_blocks() {
            for j in 0..self.col_blocks() {
                let blk = self.block(i, j);
                let cols = blk.col_ids();
                for row in 0..blk.nrows() {
                    for (local, _) in blk.row_entries(row) {
                        counts[cols[local]] += 1;
                    }
                }
            }
        }
        counts
    }

    /// Dense row-major copy of the full matrix; oracle use only.
    pub fn to_dense(&self) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        assert!(r * c <= 40_000_000, "dense copy is for desk-scale oracles");
        let mut dense = vec![0.0; r * c];
        for i in 0..self.row_blocks() {
            for j in 0..self.col_blocks() {
                let blk = self.block(i, j);
                let rows = blk.row_ids();
                let cols = blk.col_ids();
                for lr in 0..blk.nrows() {
                    for (lc, v) in blk.row_entries(lr) {
                        dense[rows[lr] * c + cols[lc]] = v;
                    }
                }
            }
        }
        dense
    }
}

/// Double every entry; the factor the solver applies to transposed products.
pub fn double_in_place(v: &mut [f64]) {
    for t in v {
        *t *= 2.0;
    }
}
