//! Implicit convection-diffusion on the unit interval/square/cube.
//!
//! Backward Euler on `u_t - nu lap(u) + a . grad(u) = s` with homogeneous
//! Dirichlet boundaries gives one linear system `A u = u_prev + dt s` per
//! time step, `A = I + dt L_h`. The Jacobi splitting `A = D - R` turns each
//! step into a fixed-point problem `u = D^{-1} R u + D^{-1}(u_prev + dt s)`
//! whose iteration matrix is a max-norm contraction exactly when `A` is
//! strictly diagonally dominant by rows; building refuses otherwise.
//!
//! Unknowns are permuted block-major over a process grid so each process
//! owns one contiguous block: a box of grid points.

use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::math::{BlockStructure, BlockVector, LinearMap, SparseBlockMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionScheme {
    /// First-order upwind: unconditionally dominance-preserving.
    Upwind,
    /// Second-order centered: loses dominance for cell Peclet numbers > 2.
    Centered,
}

impl Default for ConvectionScheme {
    fn default() -> Self {
        ConvectionScheme::Upwind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvDiffConfig {
    /// Spatial dimension, 1 to 3.
    pub dims: usize,
    /// Interior grid points per axis; the mesh width is `1 / (grid_n + 1)`.
    pub grid_n: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Convection velocity; components beyond `dims` are ignored.
    #[serde(default = "default_velocity")]
    pub velocity: [f64; 3],
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
    /// Process grid: blocks per axis. Axes beyond `dims` must be 1.
    #[serde(default = "default_partition")]
    pub partition: [usize; 3],
    #[serde(default)]
    pub convection: ConvectionScheme,
}

fn default_nu() -> f64 {
    0.5
}

fn default_velocity() -> [f64; 3] {
    [0.1, -0.2, 0.3]
}

fn default_dt() -> f64 {
    0.01
}

fn default_time_steps() -> usize {
    1
}

fn default_partition() -> [usize; 3] {
    [1, 1, 1]
}

impl ConvDiffConfig {
    /// Default physics (`nu = 0.5`, `a = (0.1, -0.2, 0.3)`, `dt = 0.01`,
    /// upwind) with a balanced partition into `num_blocks` processes.
    pub fn standard(dims: usize, grid_n: usize, num_blocks: usize) -> Self {
        ConvDiffConfig {
            dims,
            grid_n,
            nu: default_nu(),
            velocity: default_velocity(),
            dt: default_dt(),
            time_steps: default_time_steps(),
            partition: balanced_partition(num_blocks, dims),
            convection: ConvectionScheme::Upwind,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.partition.iter().product()
    }
}

/// Splits `num_blocks` over `dims` axes as evenly as possible: prime factors
/// in descending order each go to the axis with the smallest running product.
pub fn balanced_partition(num_blocks: usize, dims: usize) -> [usize; 3] {
    assert!(num_blocks >= 1 && (1..=3).contains(&dims));
    let mut rest = num_blocks;
    let mut factors = Vec::new();
    let mut p = 2;
    while p * p <= rest {
        while rest % p == 0 {
            factors.push(p);
            rest /= p;
        }
        p += 1;
    }
    if rest > 1 {
        factors.push(rest);
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let mut part = [1usize; 3];
    for f in factors {
        let axis = (0..dims).min_by_key(|&k| (part[k], k)).unwrap();
        part[axis] *= f;
    }
    part
}

/// Even split of `points` into `parts` contiguous segments; the remainder
/// goes to the leading segments.
fn split_axis(points: usize, parts: usize) -> Vec<usize> {
    let base = points / parts;
    let extra = points % parts;
    (0..parts).map(|s| base + usize::from(s < extra)).collect()
}

fn validate(cfg: &ConvDiffConfig) -> Result<(), WorkloadError> {
    let bad = |msg: String| Err(WorkloadError::BadConfig(msg));
    if !(1..=3).contains(&cfg.dims) {
        return bad(format!("dims must be 1, 2, or 3, got {}", cfg.dims));
    }
    if cfg.grid_n < 2 {
        return bad(format!("need at least 2 interior points per axis, got {}", cfg.grid_n));
    }
    if !(cfg.nu.is_finite() && cfg.nu >= 0.0) {
        return bad(format!("nu must be finite and >= 0, got {}", cfg.nu));
    }
    if !cfg.velocity.iter().all(|a| a.is_finite()) {
        return bad("velocity components must be finite".into());
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return bad(format!("dt must be finite and positive, got {}", cfg.dt));
    }
    if cfg.time_steps == 0 {
        return bad("need at least one time step".into());
    }
    for k in 0..3 {
        if k < cfg.dims {
            if cfg.partition[k] < 1 || cfg.partition[k] > cfg.grid_n {
                return bad(format!(
                    "partition[{k}] must lie in 1..={}, got {}",
                    cfg.grid_n, cfg.partition[k]
                ));
            }
        } else if cfg.partition[k] != 1 {
            return bad(format!(
                "partition[{k}] must be 1 for a {}-dimensional problem",
                cfg.dims
            ));
        }
    }
    Ok(())
}

/// Assembled system, independent of the time step being solved.
pub struct ConvDiffSystem {
    structure: BlockStructure,
    /// Jacobi iteration matrix `D^{-1} R`, block-major.
    j: SparseBlockMatrix,
    /// Reciprocal diagonal of `A`, block-major.
    d_inv: Vec<f64>,
    /// `dt * s` at the interior points, block-major.
    dt_source: Vec<f64>,
    /// Full `A` in `(row, col, value)` triplets, sorted, block-major.
    a_trips: Vec<(usize, usize, f64)>,
}

impl ConvDiffSystem {
    pub fn build(cfg: &ConvDiffConfig) -> Result<ConvDiffSystem, WorkloadError> {
        validate(cfg)?;
        let n = cfg.grid_n;
        let h = 1.0 / (n as f64 + 1.0);
        let axis_points = |k: usize| if k < cfg.dims { n } else { 1 };
        let total: usize = (0..3).map(axis_points).product();

        // Per axis: segment lengths and each point's (segment, local coord).
        let seg_lens: Vec<Vec<usize>> =
            (0..3).map(|k| split_axis(axis_points(k), cfg.partition[k])).collect();
        let point_seg: Vec<Vec<(usize, usize)>> = seg_lens
            .iter()
            .map(|lens| {
                let mut out = Vec::new();
                for (s, &len) in lens.iter().enumerate() {
                    for l in 0..len {
                        out.push((s, l));
                    }
                }
                out
            })
            .collect();

        // Block-major structure: block index runs axis 0 fastest, block
        // volume is the product of its segment lengths.
        let num_blocks = cfg.num_blocks();
        let mut dims = vec![0usize; num_blocks];
        for b2 in 0..cfg.partition[2] {
            for b1 in 0..cfg.partition[1] {
                for b0 in 0..cfg.partition[0] {
                    let b = b0 + cfg.partition[0] * (b1 + cfg.partition[1] * b2);
                    dims[b] = seg_lens[0][b0] * seg_lens[1][b1] * seg_lens[2][b2];
                }
            }
        }
        let structure = BlockStructure::new(dims);

        // Grid-linear (axis 0 fastest) to block-major permutation.
        let coords = |g: usize| {
            let i0 = g % axis_points(0);
            let i1 = (g / axis_points(0)) % axis_points(1);
            let i2 = g / (axis_points(0) * axis_points(1));
            [i0, i1, i2]
        };
        let mut perm = vec![0usize; total];
        for (g, slot) in perm.iter_mut().enumerate() {
            let c = coords(g);
            let segs: Vec<(usize, usize)> = (0..3).map(|k| point_seg[k][c[k]]).collect();
            let b = segs[0].0 + cfg.partition[0] * (segs[1].0 + cfg.partition[1] * segs[2].0);
            let (l0, l1) = (seg_lens[0][segs[0].0], seg_lens[1][segs[1].0]);
            let local = segs[0].1 + l0 * (segs[1].1 + l1 * segs[2].1);
            *slot = structure.offset(b) + local;
        }

        // Stencil of A = I + dt L per axis: diffusion plus convection.
        let h2 = h * h;
        let mut west = [0.0f64; 3];
        let mut east = [0.0f64; 3];
        let mut diag = 1.0f64;
        for k in 0..cfg.dims {
            let a = cfg.velocity[k];
            diag += cfg.dt * 2.0 * cfg.nu / h2;
            west[k] = cfg.dt * (-cfg.nu / h2);
            east[k] = cfg.dt * (-cfg.nu / h2);
            match cfg.convection {
                ConvectionScheme::Upwind => {
                    if a > 0.0 {
                        west[k] += cfg.dt * (-a / h);
                        diag += cfg.dt * (a / h);
                    } else if a < 0.0 {
                        east[k] += cfg.dt * (a / h);
                        diag += cfg.dt * (-a / h);
                    }
                }
                ConvectionScheme::Centered => {
                    west[k] += cfg.dt * (-a / (2.0 * h));
                    east[k] += cfg.dt * (a / (2.0 * h));
                }
            }
        }

        let stride = [1usize, axis_points(0), axis_points(0) * axis_points(1)];
        let mut off: Vec<(usize, usize, f64)> = Vec::with_capacity(total * 2 * cfg.dims);
        let mut dt_source = vec![0.0f64; total];
        for g in 0..total {
            let r = perm[g];
            let c = coords(g);
            for k in 0..cfg.dims {
                if c[k] > 0 {
                    off.push((r, perm[g - stride[k]], west[k]));
                }
                if c[k] + 1 < n {
                    off.push((r, perm[g + stride[k]], east[k]));
                }
            }
            let s: f64 = (0..cfg.dims).map(|k| ((c[k] + 1) as f64 * h).sin()).product();
            dt_source[r] = cfg.dt * s;
        }

        // Strict diagonal dominance. The diagonal is constant, so scanning
        // row sums of the off-diagonal part suffices.
        let mut offsum = vec![0.0f64; total];
        for &(r, _, v) in &off {
            offsum[r] += v.abs();
        }
        for (r, &s) in offsum.iter().enumerate() {
            if diag.abs() <= s {
                return Err(WorkloadError::NotDiagonallyDominant {
                    row: r,
                    diag: diag.abs(),
                    offsum: s,
                });
            }
        }

        let j_trips: Vec<(usize, usize, f64)> =
            off.iter().map(|&(r, c, v)| (r, c, -v / diag)).collect();
        let j = SparseBlockMatrix::from_triplets(structure.clone(), &j_trips);

        let mut a_trips: Vec<(usize, usize, f64)> = (0..total).map(|r| (r, r, diag)).collect();
        a_trips.extend(off);
        a_trips.sort_by_key(|&(r, c, _)| (r, c));

        Ok(ConvDiffSystem {
            structure,
            j,
            d_inv: vec![1.0 / diag; total],
            dt_source,
            a_trips,
        })
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Fixed-point map of one time step: `u -> J u + D^{-1}(prev + dt s)`.
    pub fn map_for(&self, prev: &BlockVector) -> LinearMap {
        assert!(prev.matches(&self.structure), "previous step has wrong structure");
        let flat = prev.flatten();
        let offset: Vec<f64> = flat
            .iter()
            .zip(&self.dt_source)
            .zip(&self.d_inv)
            .map(|((u, s), d)| d * (u + s))
            .collect();
        LinearMap::new(self.j.clone(), BlockVector::from_flat(&self.structure, &offset))
    }

    /// The system matrix `A` as sorted flat triplets, block-major.
    pub fn system_triplets(&self) -> Vec<(usize, usize, f64)> {
        self.a_trips.clone()
    }

    /// Right-hand side `prev + dt s` of the step following `prev`.
    pub fn rhs(&self, prev: &BlockVector) -> Vec<f64> {
        prev.flatten().iter().zip(&self.dt_source).map(|(u, s)| u + s).collect()
    }
}
