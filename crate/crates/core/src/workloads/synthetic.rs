//! Random affine contractions with an exactly known contraction factor.
//!
//! Every scalar row of the iteration matrix is scaled so its absolute sum
//! equals `alpha`, and the scaling is done segment by segment against
//! per-block targets so the blockwise aggregate sensitivity also equals
//! `alpha` instead of merely bounding it. Entries are non-negative, so the
//! spectral radius equals `alpha` too (constant row sums, Perron vector of
//! ones) and the realized asymptotic rate matches the advertised one, the
//! same shape as a Jacobi matrix of an upwind discretization. The fixed
//! point is computed in closed form by a dense solve of `(I - M) x = c`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::math::{
    BlockStructure, BlockVector, DenseMatrix, LinearMap, SparseBlockMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum SparsityPattern {
    /// Every block depends on every block.
    Dense,
    /// Block `i` depends on blocks within cyclic distance `width`.
    Ring { width: usize },
}

impl Default for SparsityPattern {
    fn default() -> Self {
        SparsityPattern::Dense
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Number of blocks (= processes).
    pub n: usize,
    /// Dimension of each block.
    #[serde(default = "default_block_dim")]
    pub block_dim: usize,
    /// Max-norm contraction factor, in `[0, 1)`. Zero gives a constant map.
    pub alpha: f64,
    #[serde(default)]
    pub pattern: SparsityPattern,
    pub seed: u64,
    /// Offset entries are drawn uniformly from `(-0.5, 0.5)` and multiplied
    /// by this scale. Zero pins the fixed point at the origin.
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
}

fn default_block_dim() -> usize {
    1
}

fn default_offset_scale() -> f64 {
    1.0
}

fn validate(cfg: &SyntheticConfig) -> Result<(), WorkloadError> {
    let bad = |msg: String| Err(WorkloadError::BadConfig(msg));
    if cfg.n == 0 {
        return bad("need at least one block".into());
    }
    if cfg.block_dim == 0 {
        return bad("block dimension must be >= 1".into());
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha < 1.0) {
        return bad(format!("alpha must lie in [0, 1), got {}", cfg.alpha));
    }
    if !(cfg.offset_scale.is_finite() && cfg.offset_scale >= 0.0) {
        return bad(format!("offset scale must be finite and >= 0, got {}", cfg.offset_scale));
    }
    if let SparsityPattern::Ring { width } = cfg.pattern {
        if width == 0 {
            return bad("ring width must be >= 1, or use the dense pattern".into());
        }
    }
    Ok(())
}

/// Blocks block `i` depends on under `pattern`, ascending, including `i`.
fn allowed_blocks(pattern: SparsityPattern, n: usize, i: usize) -> Vec<usize> {
    match pattern {
        SparsityPattern::Dense => (0..n).collect(),
        SparsityPattern::Ring { width } => {
            let mut out: Vec<usize> = (0..n)
                .filter(|&j| {
                    let d = (n + j - i) % n;
                    d.min(n - d) <= width
                })
                .collect();
            out.sort_unstable();
            out
        }
    }
}

pub(super) fn build(cfg: &SyntheticConfig) -> Result<(LinearMap, BlockVector), WorkloadError> {
    validate(cfg)?;
    let structure = BlockStructure::uniform(cfg.n, cfg.block_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();

    for i in 0..cfg.n {
        let cols = allowed_blocks(cfg.pattern, cfg.n, i);
        // Split alpha over the allowed block columns. Every scalar row of
        // block row i is scaled against the same targets, so the largest
        // row sum of block (i, j) equals target[j] and the aggregate
        // sensitivity collapses to exactly alpha.
        let weights: Vec<f64> = cols.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let wsum: f64 = weights.iter().sum();
        for r in 0..cfg.block_dim {
            let row = structure.offset(i) + r;
            for (&j, &w) in cols.iter().zip(&weights) {
                let target = cfg.alpha * (w / wsum);
                // Non-negative entries keep the spectral radius at alpha;
                // signed entries would cancel and converge much faster than
                // the advertised rate.
                let raw: Vec<f64> = (0..cfg.block_dim)
                    .map(|_| rng.gen_range(0.2..1.0))
                    .collect();
                if target == 0.0 {
                    continue;
                }
                let seg_sum: f64 = raw.iter().map(|v| v.abs()).sum();
                let scale = target / seg_sum;
                for (c, v) in raw.iter().enumerate() {
                    triplets.push((row, structure.offset(j) + c, v * scale));
                }
            }
        }
    }

    let offset = BlockVector::new(
        (0..cfg.n)
            .map(|_| {
                (0..cfg.block_dim)
                    .map(|_| rng.gen_range(-0.5..0.5) * cfg.offset_scale)
                    .collect()
            })
            .collect(),
    );

    // Closed-form fixed point: x* solves (I - M) x = c.
    let m = structure.total_dim();
    let mut system: Vec<(usize, usize, f64)> = (0..m).map(|r| (r, r, 1.0)).collect();
    system.extend(triplets.iter().map(|&(r, c, v)| (r, c, -v)));
    let dense = DenseMatrix::from_triplets(m, &system)?;
    let solution = dense.solve(&offset.flatten())?;
    let fixed_point = BlockVector::from_flat(&structure, &solution);

    let matrix = SparseBlockMatrix::from_triplets(structure, &triplets);
    Ok((LinearMap::new(matrix, offset), fixed_point))
}
