//! Central finite-difference oracle for gradient checks.

use super::scalar::Scalar;
use super::tape::{TapeBase, VarBase};
use super::tensor::TensorBase;
use crate::error::{CoreError, Result};

/// Compare the analytic gradient of `f` at `x` against central finite
/// differences and return the worst relative error
/// `|analytic - central| / max(1, |central|)` over all coordinates.
///
/// `f` builds a scalar loss on the given tape from the given input; the
/// analytic side runs one reverse pass, the numeric side re-evaluates the
/// forward value at `x ± eps` per coordinate and never touches the
/// backward machinery.
pub fn finite_diff_check<S, F>(f: F, x: &TensorBase<S>, eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&TapeBase<S>, &VarBase<S>) -> Result<VarBase<S>>,
{
    if eps <= S::zero() {
        return Err(CoreError::InvalidArgument("eps must be positive".into()));
    }

    let eval = |t: &TensorBase<S>| -> Result<S> {
        let tape = TapeBase::new();
        let leaf = tape.leaf(t.clone().no_grad());
        let out = f(&tape, &leaf)?;
        let v = out.value();
        if !v.is_scalar() {
            return Err(CoreError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        if !v.all_finite() {
            return Err(CoreError::NonFinite { op: "finite_diff_check" });
        }
        Ok(v.item())
    };

    // Analytic gradient.
    let tape = TapeBase::new();
    let leaf = tape.leaf(x.clone().with_grad(true));
    let out = f(&tape, &leaf)?;
    let grads = tape.backward(&out)?;
    let analytic = grads
        .wrt(&leaf)
        .cloned()
        .unwrap_or_else(|| TensorBase::zeros(x.shape().to_vec()));

    let two = S::from_float(2.0);
    let mut worst = S::zero();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let central = (up - down) / (two * eps);
        let denom = S::one().max(central.abs());
        let err = (analytic.data()[i] - central).abs() / denom;
        worst = worst.max(err);
    }
    Ok(worst)
}
