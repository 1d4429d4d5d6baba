use super::{BlockStructure, BlockVector};

/// A blockwise fixed-point map `f : X -> X`.
///
/// Implementations must be deterministic and side-effect free: evaluating a
/// block twice on bitwise-equal inputs returns bitwise-equal outputs.
pub trait FixedPointMap: Send + Sync {
    fn structure(&self) -> &BlockStructure;

    /// Evaluates `f_i` on the full vector `y`. Only blocks listed in
    /// `dependency(i)` may influence the result.
    ///
    /// Panics if `y` does not match the map's structure; callers that accept
    /// external data validate first.
    fn eval_block(&self, i: usize, y: &BlockVector) -> Vec<f64>;

    /// Blocks read by `f_i`, sorted ascending. Always contains `i` itself:
    /// a process never ignores its own block.
    fn dependency(&self, i: usize) -> &[usize];

    /// Matrix and offset of an affine map `x -> Mx + c`, when the map has one.
    /// Sensitivity coefficients are derived from this form.
    fn linear_form(&self) -> Option<(&SparseBlockMatrix, &BlockVector)> {
        None
    }
}

/// One sparse `rows x cols` block in compressed row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrBlock {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrBlock {
    fn from_sorted_entries(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for &(r, c, v) in entries {
            debug_assert!(r < nrows && c < ncols);
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrBlock { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `out += B * x`, accumulating row by row.
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            out[r] += acc;
        }
    }

    /// Operator norm induced by max-abs norms: the largest absolute row sum.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
    }
}

/// A square block-sparse matrix over a [`BlockStructure`]: each block row
/// holds its nonzero blocks sorted by block column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseBlockMatrix {
    structure: BlockStructure,
    rows: Vec<Vec<(usize, CsrBlock)>>,
}

impl SparseBlockMatrix {
    /// Builds from `(row, col, value)` triplets over flat indices.
    /// Duplicate positions accumulate. Panics on out-of-range indices.
    pub fn from_triplets(structure: BlockStructure, triplets: &[(usize, usize, f64)]) -> Self {
        let total = structure.total_dim();
        let n = structure.num_blocks();
        // Bucket entries per (block row, block col) with local coordinates.
        let mut buckets: Vec<std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>>> =
            vec![std::collections::BTreeMap::new(); n];
        for &(r, c, v) in triplets {
            assert!(r < total && c < total, "triplet ({r},{c}) out of range");
            let (bi, li) = structure.locate(r);
            let (bj, lj) = structure.locate(c);
            buckets[bi].entry(bj).or_default().push((li, lj, v));
        }
        let rows = buckets
            .into_iter()
            .enumerate()
            .map(|(bi, row)| {
                row.into_iter()
                    .map(|(bj, mut entries)| {
                        entries.sort_by_key(|&(r, c, _)| (r, c));
                        // Accumulate duplicates.
                        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
                        for (r, c, v) in entries {
                            match merged.last_mut() {
                                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                                _ => merged.push((r, c, v)),
                            }
                        }
                        let blk = CsrBlock::from_sorted_entries(
                            structure.dim(bi),
                            structure.dim(bj),
                            &merged,
                        );
                        (bj, blk)
                    })
                    .collect()
            })
            .collect();
        SparseBlockMatrix { structure, rows }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&CsrBlock> {
        self.rows[i]
            .binary_search_by_key(&j, |(bj, _)| *bj)
            .ok()
            .map(|k| &self.rows[i][k].1)
    }

    /// Nonzero blocks of block row `i`, ascending by block column.
    pub fn row_blocks(&self, i: usize) -> impl Iterator<Item = (usize, &CsrBlock)> {
        self.rows[i].iter().map(|(j, b)| (*j, b))
    }

    /// `(M x)_i`, accumulating block products in ascending block-column order.
    pub fn mul_block(&self, i: usize, x: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; self.structure.dim(i)];
        for (j, blk) in self.row_blocks(i) {
            blk.mul_add(x.block(j), &mut out);
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().flatten().map(|(_, b)| b.nnz()).sum()
    }

    /// Flat `(row, col, value)` triplets in block-row order.
    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.structure.num_blocks() {
            let ro = self.structure.offset(i);
            for (j, blk) in self.row_blocks(i) {
                let co = self.structure.offset(j);
                for r in 0..blk.nrows() {
                    for (c, v) in blk.row(r) {
                        out.push((ro + r, co + c, v));
                    }
                }
            }
        }
        out.sort_by_key(|&(r, c, _)| (r, c));
        out
    }
}

/// An affine fixed-point map `x -> Mx + c`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: SparseBlockMatrix,
    offset: BlockVector,
    deps: Vec<Vec<usize>>,
}

impl LinearMap {
    /// Panics if `offset` does not match the matrix structure.
    pub fn new(matrix: SparseBlockMatrix, offset: BlockVector) -> Self {
        assert!(
            offset.matches(matrix.structure()),
            "offset must match the matrix block structure"
        );
        let n = matrix.structure().num_blocks();
        let deps = (0..n)
            .map(|i| {
                let mut d: Vec<usize> = matrix.row_blocks(i).map(|(j, _)| j).collect();
                if !d.contains(&i) {
                    d.push(i);
                    d.sort_unstable();
                }
                d
            })
            .collect();
        LinearMap { matrix, offset, deps }
    }

    pub fn matrix(&self) -> &SparseBlockMatrix {
        &self.matrix
    }

    pub fn offset(&self) -> &BlockVector {
        &self.offset
    }
}

impl FixedPointMap for LinearMap {
    fn structure(&self) -> &BlockStructure {
        self.matrix.structure()
    }

    fn eval_block(&self, i: usize, y: &BlockVector) -> Vec<f64> {
        assert!(y.matches(self.structure()), "input does not match map structure");
        let mut out = self.matrix.mul_block(i, y);
        for (o, c) in out.iter_mut().zip(self.offset.block(i)) {
            *o += c;
        }
        out
    }

    fn dependency(&self, i: usize) -> &[usize] {
        &self.deps[i]
    }

    fn linear_form(&self) -> Option<(&SparseBlockMatrix, &BlockVector)> {
        Some((&self.matrix, &self.offset))
    }
}
