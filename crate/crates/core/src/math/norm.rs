use super::{BlockVector, MathError};

/// How per-block max-abs norms combine into a norm on the product space.
#[derive(Clone, Debug, PartialEq)]
pub enum NormSpec {
    /// `(sum_i ||x_i||^p)^(1/p)` with `p >= 1`.
    Lp(f64),
    /// `max_i ||x_i|| / w_i` with every `w_i > 0`.
    ///
    /// The plain max norm is `MaxWeighted` with unit weights; there is no
    /// separate `p = infinity` case.
    MaxWeighted(Vec<f64>),
}

impl NormSpec {
    pub fn max_unweighted(n: usize) -> Self {
        NormSpec::MaxWeighted(vec![1.0; n])
    }

    pub fn validate(&self, num_blocks: usize) -> Result<(), MathError> {
        match self {
            NormSpec::Lp(p) => {
                if !p.is_finite() || *p < 1.0 {
                    return Err(MathError::InvalidNorm(format!(
                        "p must be finite and >= 1, got {p}"
                    )));
                }
            }
            NormSpec::MaxWeighted(w) => {
                if w.len() != num_blocks {
                    return Err(MathError::InvalidNorm(format!(
                        "{} weights for {num_blocks} blocks",
                        w.len()
                    )));
                }
                if !w.iter().all(|&wi| wi.is_finite() && wi > 0.0) {
                    return Err(MathError::InvalidNorm(
                        "weights must be finite and positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Max-abs norm of a single block.
pub fn block_max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// `max_k |a_k - b_k|` without allocating the difference.
pub fn sub_max_abs(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
}

/// Norm of `x` under `spec`. Blocks reduce left to right, so equal inputs
/// give bitwise-equal results.
pub fn norm(x: &BlockVector, spec: &NormSpec) -> Result<f64, MathError> {
    spec.validate(x.num_blocks())?;
    Ok(match spec {
        NormSpec::Lp(p) => {
            let mut acc = 0.0f64;
            for i in 0..x.num_blocks() {
                acc += block_max_abs(x.block(i)).powf(*p);
            }
            acc.powf(1.0 / *p)
        }
        NormSpec::MaxWeighted(w) => {
            let mut m = 0.0f64;
            for i in 0..x.num_blocks() {
                m = m.max(block_max_abs(x.block(i)) / w[i]);
            }
            m
        }
    })
}
