//! Problem generators.
//!
//! Two families: synthetic linear contractions with an exactly known
//! contraction factor and closed-form fixed point, and a backward-Euler
//! convection-diffusion system partitioned over a process grid. Both produce
//! the same artifact: a block [`LinearMap`] `x -> J x + c` whose fixed point
//! is the solution of the current outer step.

mod convdiff;
mod synthetic;

pub use convdiff::{ConvDiffConfig, ConvDiffSystem, ConvectionScheme};
pub use synthetic::{SparsityPattern, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::math::{
    delta_coeffs, BlockStructure, BlockVector, FixedPointMap, LinearMap, MathError,
};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    BadConfig(String),
    #[error(
        "Jacobi splitting is not a max-norm contraction: row {row} has |diag| {diag:.6e} \
         <= off-diagonal sum {offsum:.6e} (try upwind convection, a finer grid, or smaller dt)"
    )]
    NotDiagonallyDominant { row: usize, diag: f64, offsum: f64 },
    #[error("workload '{0}' was built programmatically and cannot be rebuilt from config")]
    NotBuildable(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkloadConfig {
    Synthetic(SyntheticConfig),
    ConvDiff(ConvDiffConfig),
    /// Placeholder recorded in logs of programmatically built workloads.
    Custom { name: String },
}

impl WorkloadConfig {
    pub fn short_name(&self) -> String {
        match self {
            WorkloadConfig::Synthetic(c) => format!("synthetic-n{}-a{}", c.n, c.alpha),
            WorkloadConfig::ConvDiff(c) => {
                format!("convdiff-{}d-g{}-n{}", c.dims, c.grid_n, c.num_blocks())
            }
            WorkloadConfig::Custom { name } => name.clone(),
        }
    }
}

enum Inner {
    /// One map for every step; optional closed-form fixed point.
    Fixed { map: LinearMap, fixed_point: Option<BlockVector> },
    ConvDiff(ConvDiffSystem),
}

/// A built problem: initial point, outer step count, and a map per step.
pub struct Workload {
    name: String,
    structure: BlockStructure,
    x0: BlockVector,
    time_steps: usize,
    inner: Inner,
}

impl Workload {
    pub fn build(cfg: &WorkloadConfig) -> Result<Workload, WorkloadError> {
        match cfg {
            WorkloadConfig::Synthetic(c) => {
                let (map, fixed_point) = synthetic::build(c)?;
                let structure = map.structure().clone();
                Ok(Workload {
                    name: cfg.short_name(),
                    x0: BlockVector::zeros(&structure),
                    structure,
                    time_steps: 1,
                    inner: Inner::Fixed { map, fixed_point: Some(fixed_point) },
                })
            }
            WorkloadConfig::ConvDiff(c) => {
                let sys = ConvDiffSystem::build(c)?;
                let structure = sys.structure().clone();
                Ok(Workload {
                    name: cfg.short_name(),
                    x0: BlockVector::zeros(&structure),
                    structure,
                    time_steps: c.time_steps,
                    inner: Inner::ConvDiff(sys),
                })
            }
            WorkloadConfig::Custom { name } => Err(WorkloadError::NotBuildable(name.clone())),
        }
    }

    /// Wrap an explicitly constructed map (tests and scripted scenarios).
    pub fn from_map(name: &str, map: LinearMap) -> Workload {
        let structure = map.structure().clone();
        Workload {
            name: name.to_string(),
            x0: BlockVector::zeros(&structure),
            structure,
            time_steps: 1,
            inner: Inner::Fixed { map, fixed_point: None },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn initial(&self) -> &BlockVector {
        &self.x0
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    /// The fixed-point map for one outer step. `prev` is the accepted
    /// solution of the previous step (the initial point for step 0); only
    /// the offset depends on it.
    pub fn map_for_step(&self, prev: &BlockVector) -> LinearMap {
        match &self.inner {
            Inner::Fixed { map, .. } => map.clone(),
            Inner::ConvDiff(sys) => sys.map_for(prev),
        }
    }

    /// Closed-form fixed point when one exists (synthetic workloads).
    pub fn known_fixed_point(&self) -> Option<&BlockVector> {
        match &self.inner {
            Inner::Fixed { fixed_point, .. } => fixed_point.as_ref(),
            Inner::ConvDiff(_) => None,
        }
    }

    /// Max-norm contraction factor delta(f) of the iteration matrix.
    pub fn contraction_bound(&self) -> f64 {
        let map = self.map_for_step(&self.x0);
        delta_coeffs(&map).expect("linear map").delta_f
    }

    /// Power-iteration estimate of the spectral radius of |J|; a sharper
    /// convergence indicator than the row-sum bound.
    pub fn spectral_radius_estimate(&self, iterations: usize) -> f64 {
        let map = self.map_for_step(&self.x0);
        let (matrix, _) = map.linear_form().expect("linear map");
        let triplets = matrix.to_triplets();
        let m = self.structure.total_dim();
        let mut x = vec![1.0f64; m];
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let mut y = vec![0.0f64; m];
            for &(r, c, v) in &triplets {
                y[r] += v.abs() * x[c];
            }
            let norm = y.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            for v in &mut y {
                *v /= norm;
            }
            x = y;
        }
        lambda
    }

    /// Coordinate-triplet text dump of the step map `x -> J x + c` built for
    /// `prev`, for external verification. Convection-diffusion workloads also
    /// include the underlying system matrix and right-hand side.
    pub fn export_text(&self, prev: &BlockVector) -> String {
        use std::fmt::Write as _;
        let map = self.map_for_step(prev);
        let (matrix, offset) = map.linear_form().expect("linear map");
        let triplets = matrix.to_triplets();
        let mut out = String::new();
        let _ = writeln!(out, "# workload {}", self.name);
        let _ = writeln!(out, "# unknowns ordered block-major over the process partition");
        let _ = writeln!(
            out,
            "# iteration-matrix {} {} {}",
            self.structure.total_dim(),
            self.structure.total_dim(),
            triplets.len()
        );
        for (r, c, v) in &triplets {
            let _ = writeln!(out, "{r} {c} {v:?}");
        }
        let _ = writeln!(out, "# offset {}", self.structure.total_dim());
        for (i, v) in offset.flatten().iter().enumerate() {
            let _ = writeln!(out, "{i} {v:?}");
        }
        if let Inner::ConvDiff(sys) = &self.inner {
            let a = sys.system_triplets();
            let _ = writeln!(
                out,
                "# system-matrix {} {} {}",
                self.structure.total_dim(),
                self.structure.total_dim(),
                a.len()
            );
            for (r, c, v) in a {
                let _ = writeln!(out, "{r} {c} {v:?}");
            }
            let _ = writeln!(out, "# rhs {}", self.structure.total_dim());
            for (i, v) in sys.rhs(prev).iter().enumerate() {
                let _ = writeln!(out, "{i} {v:?}");
            }
        }
        out
    }
}

/// Reference synchronous iteration: every block updated from the previous
/// full vector, `sweeps` times.
pub fn reference_jacobi(f: &dyn FixedPointMap, x0: &BlockVector, sweeps: usize) -> BlockVector {
    let s = f.structure();
    let mut x = x0.clone();
    for _ in 0..sweeps {
        let mut next = BlockVector::zeros(s);
        for i in 0..s.num_blocks() {
            next.set_block(i, f.eval_block(i, &x));
        }
        x = next;
    }
    x
}

/// Reference iteration run until the max-norm update step drops below `tol`.
/// Returns the iterate and the number of sweeps taken.
pub fn reference_jacobi_to_tolerance(
    f: &dyn FixedPointMap,
    x0: &BlockVector,
    tol: f64,
    max_sweeps: usize,
) -> (BlockVector, usize) {
    let s = f.structure();
    let mut x = x0.clone();
    for sweep in 1..=max_sweeps {
        let mut next = BlockVector::zeros(s);
        let mut step = 0.0f64;
        for i in 0..s.num_blocks() {
            let b = f.eval_block(i, &x);
            step = step.max(crate::math::sub_max_abs(&b, x.block(i)));
            next.set_block(i, b);
        }
        x = next;
        if step < tol {
            return (x, sweep);
        }
    }
    (x, max_sweeps)
}
