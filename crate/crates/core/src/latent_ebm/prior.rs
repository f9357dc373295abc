//! EBM prior: p(z) proportional to exp(f(z)) * N(0, I).
//!
//! f is the negative energy, a small tanh MLP with two hidden layers. The
//! partition function never enters sampling or learning — scores are
//! gradients of log-density up to a constant — and is estimated here only
//! as a Monte-Carlo diagnostic.

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::seqmodel::CheckpointDoc;
use crate::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct PriorParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl PriorParams {
    pub fn init(latent: usize, hidden: usize, rng: &mut Rng) -> Self {
        PriorParams {
            w1: rng.normal_tensor_scaled(vec![latent, hidden], 1.0 / (latent as f64).sqrt()),
            b1: Tensor::zeros(vec![hidden]),
            w2: rng.normal_tensor_scaled(vec![hidden, hidden], 1.0 / (hidden as f64).sqrt()),
            b2: Tensor::zeros(vec![hidden]),
            w3: rng.normal_tensor_scaled(vec![hidden, 1], 1.0 / (hidden as f64).sqrt()),
            b3: Tensor::zeros(vec![1]),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn vars(&self, tape: &Tape, trainable: bool) -> PriorVars {
        let reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        PriorVars {
            w1: reg(&self.w1),
            b1: reg(&self.b1),
            w2: reg(&self.w2),
            b2: reg(&self.b2),
            w3: reg(&self.w3),
            b3: reg(&self.b3),
        }
    }

    pub fn fields(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn fields_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|t| t.all_finite())
    }

    fn check_dim(&self, z: &Tensor, op: &'static str) -> Result<(usize, usize)> {
        let d = self.latent_dim();
        match *z.shape() {
            [n, zd] if zd == d => Ok((n, d)),
            [zd] if zd == d => Ok((1, d)),
            _ => Err(CoreError::ShapeMismatch {
                op,
                lhs: z.shape().to_vec(),
                rhs: vec![d],
            }),
        }
    }

    /// Negative energy of a single latent.
    pub fn f_alpha(&self, z: &Tensor) -> Result<f64> {
        Ok(self.f_alpha_batch(z)?[0])
    }

    /// Negative energies of a batch of latents, one per row.
    pub fn f_alpha_batch(&self, z: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = self.check_dim(z, "f_alpha")?;
        let tape = Tape::new();
        let vars = self.vars(&tape, false);
        let zv = tape.constant(&Tensor::from_vec(vec![n, d], z.data().to_vec())?);
        Ok(vars.f_batch(&zv)?.value().data().to_vec())
    }

    /// Score of the prior: grad_z f(z) - z, rows aligned with z (B×d).
    /// The partition function is constant in z and contributes nothing.
    pub fn prior_score(&self, z: &Tensor) -> Result<Tensor> {
        let (n, d) = self.check_dim(z, "prior_score")?;
        let z2 = Tensor::from_vec(vec![n, d], z.data().to_vec())?;
        let tape = Tape::new();
        let vars = self.vars(&tape, false);
        let zv = tape.leaf(z2.clone().with_grad(true));
        let total = vars.f_batch(&zv)?.sum()?;
        let grads = tape.backward(&total)?;
        let mut score = grads
            .wrt(&zv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(vec![n, d]));
        score.add_scaled(&z2, -1.0);
        let out_shape = z.shape().to_vec();
        Ok(Tensor::from_vec(out_shape, score.data().to_vec())?)
    }

    /// Monte-Carlo log partition estimate over n reference draws.
    pub fn estimate_log_z(&self, n: usize, rng: &mut Rng) -> Result<f64> {
        let d = self.latent_dim();
        log_z_mc(|z| self.f_alpha_batch(z), d, n, rng)
    }

    pub fn write_into(&self, doc: &mut CheckpointDoc, prefix: &str) {
        for (name, t) in ["w1", "b1", "w2", "b2", "w3", "b3"].iter().zip(self.fields()) {
            doc.insert(&format!("{prefix}{name}"), t);
        }
    }

    pub fn read_from(doc: &CheckpointDoc, prefix: &str) -> Result<Self> {
        let get = |name: &str| doc.tensor(&format!("{prefix}{name}"));
        Ok(PriorParams {
            w1: get("w1")?,
            b1: get("b1")?,
            w2: get("w2")?,
            b2: get("b2")?,
            w3: get("w3")?,
            b3: get("b3")?,
        })
    }
}

pub struct PriorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl PriorVars {
    pub fn fields(&self) -> Vec<&Var> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    /// Negative energies for a batch, (B×d) -> (B,).
    pub fn f_batch(&self, z: &Var) -> Result<Var> {
        let h1 = z.matmul(&self.w1)?.add_rowvec(&self.b1)?.tanh()?;
        let h2 = h1.matmul(&self.w2)?.add_rowvec(&self.b2)?.tanh()?;
        let out = h2.matmul(&self.w3)?.add_rowvec(&self.b3)?;
        let rows = out.shape()[0];
        out.reshape(vec![rows])
    }
}

/// Log of the Monte-Carlo mean of exp(f) over n draws from N(0, I_d),
/// log-sum-exp stabilized and streamed in chunks. Diagnostic only.
pub fn log_z_mc<F>(f: F, d: usize, n: usize, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Vec<f64>>,
{
    if n < 1 {
        return Err(CoreError::InvalidArgument("log_z_mc needs n >= 1".into()));
    }
    const CHUNK: usize = 8192;
    let mut running_max = f64::NEG_INFINITY;
    let mut running_sum = 0.0f64;
    let mut left = n;
    while left > 0 {
        let take = left.min(CHUNK);
        let z = rng.normal_tensor::<f64>(vec![take, d]);
        let fs = f(&z)?;
        if fs.len() != take {
            return Err(CoreError::InvalidArgument(
                "energy closure returned wrong count".into(),
            ));
        }
        for v in fs {
            if !v.is_finite() {
                return Err(CoreError::NonFinite { op: "log_z_mc" });
            }
            if v > running_max {
                running_sum = running_sum * (running_max - v).exp();
                running_max = v;
            }
            running_sum += (v - running_max).exp();
        }
        left -= take;
    }
    Ok(running_max + running_sum.ln() - (n as f64).ln())
}
