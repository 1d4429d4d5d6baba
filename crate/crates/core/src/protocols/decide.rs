//! Collective evaluation of a completed snapshot round.
//!
//! Each process contributes the max-abs residual of its own block evaluated
//! on its recorded view; one counted reduction combines the contributions
//! into the global residual in the decision norm. When every recorded view
//! agrees with the owners' records, the reduced value is bitwise equal to the
//! plain residual of the recorded point.

use crate::math::{BlockVector, FixedPointMap, NormSpec};
use crate::protocols::SnapshotResult;
use crate::simnet::{Net, NetError, ReduceOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Converged,
    Continue,
}

#[derive(Debug, Clone)]
pub struct EpochEvaluation {
    pub epoch: u32,
    pub contributions: Vec<f64>,
    pub reduced: f64,
    pub threshold: f64,
    pub decision: Decision,
}

#[derive(Debug, thiserror::Error)]
pub enum DecideError {
    #[error("expected {expected} snapshot results, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("snapshot results span epochs {min} and {max}")]
    EpochMismatch { min: u32, max: u32 },
    #[error("process {0} result does not carry its own block")]
    MissingOwnEntry(usize),
    #[error("process {pid} recorded a value of dimension {got} for block {block} (want {want})")]
    BadEntryDim { pid: usize, block: usize, got: usize, want: usize },
    #[error("reduction failed: {0}")]
    Reduce(#[from] NetError),
}

/// Assemble each process's recorded view, reduce the per-block residual
/// contributions over `net`, and compare against `threshold` (strict less
/// than). Exactly one reduction is performed per call.
pub fn evaluate_and_decide(
    net: &mut Net,
    f: &dyn FixedPointMap,
    results: &[SnapshotResult],
    norm: &NormSpec,
    threshold: f64,
) -> Result<EpochEvaluation, DecideError> {
    let s = f.structure();
    let n = s.num_blocks();
    if results.len() != n {
        return Err(DecideError::WrongCount { expected: n, got: results.len() });
    }
    let epoch = results[0].epoch;
    for r in results {
        if r.epoch != epoch {
            let min = results.iter().map(|r| r.epoch).min().unwrap();
            let max = results.iter().map(|r| r.epoch).max().unwrap();
            return Err(DecideError::EpochMismatch { min, max });
        }
    }
    norm.validate(n).expect("decision norm validated at configuration time");

    let mut contributions = Vec::with_capacity(n);
    for (i, r) in results.iter().enumerate() {
        if r.entries[i].is_none() {
            return Err(DecideError::MissingOwnEntry(i));
        }
        let mut view = BlockVector::zeros(&s);
        for (j, e) in r.entries.iter().enumerate() {
            if let Some(v) = e {
                if v.len() != s.dim(j) {
                    return Err(DecideError::BadEntryDim {
                        pid: i,
                        block: j,
                        got: v.len(),
                        want: s.dim(j),
                    });
                }
                view.set_block(j, v.clone());
            }
        }
        let fi = f.eval_block(i, &view);
        let own = view.block(i);
        let mut bm = 0.0f64;
        for (a, b) in fi.iter().zip(own) {
            bm = bm.max((a - b).abs());
        }
        let c = match norm {
            NormSpec::Lp(_) => bm,
            NormSpec::MaxWeighted(w) => bm / w[i],
        };
        contributions.push(c);
    }

    let op = match norm {
        NormSpec::Lp(p) => ReduceOp::SumP(*p),
        NormSpec::MaxWeighted(_) => ReduceOp::Max,
    };
    let reduced = net.reduce(&contributions, op)?;
    let decision = if reduced < threshold { Decision::Converged } else { Decision::Continue };
    Ok(EpochEvaluation { epoch, contributions, reduced, threshold, decision })
}
