use super::{FixedPointMap, MathError};

/// Blockwise sensitivity coefficients of a map.
///
/// `delta[i][j]` bounds how far `f_i` can move when only block `j` of the
/// input moves: `||f_i(x) - f_i(x')|| <= delta[i][j] * ||x_j - x'_j||` in
/// max-abs norms. Entries for blocks outside `dependency(i)` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaCoeffs {
    pub delta: Vec<Vec<f64>>,
    /// `max_i sum_j delta[i][j]`: the aggregate sensitivity used in the
    /// crossing error bound.
    pub delta_f: f64,
}

/// Computes sensitivity coefficients from a map's linear form.
///
/// For an affine map the tight coefficient is the operator norm of block
/// `M[i][j]` induced by max-abs norms, i.e. its largest absolute row sum.
/// Maps without a linear form must have coefficients supplied externally.
pub fn delta_coeffs(f: &dyn FixedPointMap) -> Result<DeltaCoeffs, MathError> {
    let (m, _) = f.linear_form().ok_or(MathError::UnsupportedMap)?;
    let n = m.structure().num_blocks();
    let mut delta = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for (j, blk) in m.row_blocks(i) {
            delta[i][j] = blk.max_abs_row_sum();
        }
    }
    let delta_f = delta
        .iter()
        .map(|row| row.iter().sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok(DeltaCoeffs { delta, delta_f })
}

/// Tightened local threshold `eps = eps_prime / (1 + eta * min_i w_i)`.
///
/// Under a contraction in the weighted max norm, driving the reduced mixed
/// residual below the returned value guarantees the exact residual of the
/// assembled test point stays below `eps_prime`, even when recorded entries
/// lag their owners by up to `eta` steady updates. The guarantee covers
/// weight vectors normalized so `min_i w_i >= 1` (rescaling `w` leaves the
/// norm's shape unchanged); below that the correction is weaker than the
/// staleness it compensates for.
pub fn adjusted_threshold(eps_prime: f64, eta: u32, w: &[f64]) -> Result<f64, MathError> {
    if !(eps_prime.is_finite() && eps_prime > 0.0) {
        return Err(MathError::InvalidArgument(format!(
            "threshold must be finite and positive, got {eps_prime}"
        )));
    }
    if w.is_empty() {
        return Err(MathError::InvalidArgument("empty weight vector".into()));
    }
    if !w.iter().all(|&wi| wi.is_finite() && wi > 0.0) {
        return Err(MathError::InvalidArgument(
            "weights must be finite and positive".into(),
        ));
    }
    let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(eps_prime / (1.0 + eta as f64 * min_w))
}
