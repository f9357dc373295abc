//! Short-run Langevin dynamics from a fixed Gaussian initializer.

use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::Tensor;

/// Sampler settings: prior chains take K0 steps of size s0, posterior
/// chains K1 steps of size s1. Both initialize from N(0, I).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub k0: usize,
    pub k1: usize,
    pub s0: f64,
    pub s1: f64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            k0: 20,
            k1: 20,
            s0: 0.1,
            s1: 0.1,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s0 < 0.0 || self.s1 < 0.0 || !self.s0.is_finite() || !self.s1.is_finite() {
            return Err(CoreError::InvalidArgument(
                "langevin step sizes must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Run n independent chains for k steps:
///
/// ```text
/// z_0 ~ N(0, I_d)
/// z_{j+1} = z_j + s * score(z_j) + sqrt(2s) * eps_j,   eps_j ~ N(0, I_d)
/// ```
///
/// and return the n final states as an (n×d) tensor. All gaussian draws
/// come from the rng's gaussian substream in a fixed order (initial states
/// row-major, then per step row-major), so a seed pins the whole run.
pub fn langevin<F>(mut score: F, n: usize, d: usize, k: usize, s: f64, rng: &mut Rng) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if n == 0 || d == 0 {
        return Err(CoreError::InvalidArgument(
            "langevin needs n >= 1 chains and d >= 1 dims".into(),
        ));
    }
    if s < 0.0 || !s.is_finite() {
        return Err(CoreError::InvalidArgument(
            "langevin step size must be nonnegative".into(),
        ));
    }
    let mut z = rng.normal_tensor::<f64>(vec![n, d]);
    let noise_scale = (2.0 * s).sqrt();
    for step in 0..k {
        let sc = score(&z)?;
        if sc.shape() != z.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "langevin score",
                lhs: sc.shape().to_vec(),
                rhs: z.shape().to_vec(),
            });
        }
        let eps = rng.normal_tensor::<f64>(vec![n, d]);
        z.add_scaled(&sc, s);
        z.add_scaled(&eps, noise_scale);
        if !z.all_finite() {
            let chain = z
                .data()
                .chunks(d)
                .position(|row| row.iter().any(|v| !v.is_finite()))
                .unwrap_or(0);
            return Err(CoreError::ChainDiverged { chain, step });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_returns_reference_draws() {
        let mut rng = Rng::new(1);
        let n = 4000;
        let z = langevin(|_| unreachable!("score not called for k=0"), n, 2, 0, 0.1, &mut rng)
            .unwrap();
        let mean: f64 = z.data().iter().sum::<f64>() / z.numel() as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn zero_step_size_keeps_initial_state() {
        let init = {
            let mut rng = Rng::new(7);
            rng.normal_tensor::<f64>(vec![5, 3])
        };
        let mut rng = Rng::new(7);
        let z = langevin(|z| Ok(z.clone()), 5, 3, 10, 0.0, &mut rng).unwrap();
        assert_eq!(z, init);
    }

    #[test]
    fn diverging_score_reports_chain_and_step() {
        let mut rng = Rng::new(2);
        let err = langevin(
            |z| {
                let mut s = z.clone();
                for v in s.data_mut() {
                    *v = f64::INFINITY;
                }
                Ok(s)
            },
            3,
            2,
            5,
            0.1,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::ChainDiverged { step: 0, .. }));
    }
}
