use super::{norm, BlockVector, FixedPointMap, MathError, NormSpec};

/// `||f(xbar) - xbar||` under `spec`, evaluating every block of `f` once.
pub fn residual(
    f: &dyn FixedPointMap,
    xbar: &BlockVector,
    spec: &NormSpec,
) -> Result<f64, MathError> {
    check_structure(f, xbar)?;
    residual_of_views(f, |_| xbar, xbar, spec)
}

/// Residual of the mixed vector assembled from per-process views.
///
/// `ybar[i]` is process `i`'s recorded view of the whole space; its own block
/// `ybar[i].block(i)` is the value process `i` stands behind. Stacking those
/// own blocks gives the test point `xbar`, and block `i` of the map is
/// evaluated on `ybar[i]`, so the result is the norm of
/// `(f_i(ybar[i]) - xbar_i)_i`: exactly what one reduction over per-process
/// scalars can compute. Returns the value together with `xbar`.
pub fn mixed_residual(
    f: &dyn FixedPointMap,
    ybar: &[BlockVector],
    spec: &NormSpec,
) -> Result<(f64, BlockVector), MathError> {
    let n = f.structure().num_blocks();
    if ybar.len() != n {
        return Err(MathError::InvalidArgument(format!(
            "{} views for {n} blocks",
            ybar.len()
        )));
    }
    for y in ybar {
        check_structure(f, y)?;
    }
    let mut xbar = BlockVector::zeros(f.structure());
    for i in 0..n {
        xbar.set_block(i, ybar[i].block(i).to_vec());
    }
    let r = residual_of_views(f, |i| &ybar[i], &xbar, spec)?;
    Ok((r, xbar))
}

/// Shared evaluation path: both entry points run bitwise-identical operations
/// when every view equals `xbar`.
fn residual_of_views<'a>(
    f: &dyn FixedPointMap,
    view: impl Fn(usize) -> &'a BlockVector,
    xbar: &BlockVector,
    spec: &NormSpec,
) -> Result<f64, MathError> {
    let n = f.structure().num_blocks();
    let mut diff = BlockVector::zeros(f.structure());
    for i in 0..n {
        let gi = f.eval_block(i, view(i));
        let di = gi
            .iter()
            .zip(xbar.block(i))
            .map(|(g, x)| g - x)
            .collect::<Vec<_>>();
        diff.set_block(i, di);
    }
    norm(&diff, spec)
}

fn check_structure(f: &dyn FixedPointMap, x: &BlockVector) -> Result<(), MathError> {
    if x.matches(f.structure()) {
        Ok(())
    } else {
        Err(MathError::StructureMismatch {
            expected: f.structure().dims().to_vec(),
            got: x.structure().dims().to_vec(),
        })
    }
}
