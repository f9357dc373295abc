//! Single-layer gated recurrent cell (update/reset gating).

use crate::diffcore::Rng;
use crate::error::Result;
use crate::seqmodel::checkpoint::CheckpointDoc;
use crate::{Tape, Tensor, Var};

/// Cell weights for one GRU layer.
///
/// Gate equations, with x the step input and h the previous hidden state:
///
/// ```text
/// r = sigmoid(x W_xr + h W_hr + b_r)        reset gate
/// u = sigmoid(x W_xu + h W_hu + b_u)        update gate
/// c = tanh   (x W_xc + (r ⊙ h) W_hc + b_c)  candidate state
/// h' = (1 - u) ⊙ h + u ⊙ c
/// ```
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_xr: Tensor,
    pub w_hr: Tensor,
    pub b_r: Tensor,
    pub w_xu: Tensor,
    pub w_hu: Tensor,
    pub b_u: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub b_c: Tensor,
}

const FIELD_NAMES: [&str; 9] = [
    "w_xr", "w_hr", "b_r", "w_xu", "w_hu", "b_u", "w_xc", "w_hc", "b_c",
];

impl GruParams {
    /// Fan-in scaled gaussian init, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let sx = 1.0 / (input as f64).sqrt();
        let sh = 1.0 / (hidden as f64).sqrt();
        let mut w_x = || rng.normal_tensor_scaled(vec![input, hidden], sx);
        let w_xr = w_x();
        let w_xu = w_x();
        let w_xc = w_x();
        let mut w_h = || rng.normal_tensor_scaled(vec![hidden, hidden], sh);
        let w_hr = w_h();
        let w_hu = w_h();
        let w_hc = w_h();
        GruParams {
            w_xr,
            w_hr,
            b_r: Tensor::zeros(vec![hidden]),
            w_xu,
            w_hu,
            b_u: Tensor::zeros(vec![hidden]),
            w_xc,
            w_hc,
            b_c: Tensor::zeros(vec![hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xr.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xr.shape()[1]
    }

    pub fn vars(&self, tape: &Tape, trainable: bool) -> GruVars {
        let reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        GruVars {
            w_xr: reg(&self.w_xr),
            w_hr: reg(&self.w_hr),
            b_r: reg(&self.b_r),
            w_xu: reg(&self.w_xu),
            w_hu: reg(&self.w_hu),
            b_u: reg(&self.b_u),
            w_xc: reg(&self.w_xc),
            w_hc: reg(&self.w_hc),
            b_c: reg(&self.b_c),
        }
    }

    pub fn fields(&self) -> Vec<&Tensor> {
        vec![
            &self.w_xr, &self.w_hr, &self.b_r, &self.w_xu, &self.w_hu, &self.b_u, &self.w_xc,
            &self.w_hc, &self.b_c,
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_xr,
            &mut self.w_hr,
            &mut self.b_r,
            &mut self.w_xu,
            &mut self.w_hu,
            &mut self.b_u,
            &mut self.w_xc,
            &mut self.w_hc,
            &mut self.b_c,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|t| t.all_finite())
    }

    pub fn write_into(&self, doc: &mut CheckpointDoc, prefix: &str) {
        for (name, t) in FIELD_NAMES.iter().zip(self.fields()) {
            doc.insert(&format!("{prefix}{name}"), t);
        }
    }

    pub fn read_from(doc: &CheckpointDoc, prefix: &str) -> Result<Self> {
        let get = |name: &str| doc.tensor(&format!("{prefix}{name}"));
        Ok(GruParams {
            w_xr: get("w_xr")?,
            w_hr: get("w_hr")?,
            b_r: get("b_r")?,
            w_xu: get("w_xu")?,
            w_hu: get("w_hu")?,
            b_u: get("b_u")?,
            w_xc: get("w_xc")?,
            w_hc: get("w_hc")?,
            b_c: get("b_c")?,
        })
    }
}

/// Cell weights registered on a tape.
pub struct GruVars {
    pub w_xr: Var,
    pub w_hr: Var,
    pub b_r: Var,
    pub w_xu: Var,
    pub w_hu: Var,
    pub b_u: Var,
    pub w_xc: Var,
    pub w_hc: Var,
    pub b_c: Var,
}

impl GruVars {
    /// One recurrence step: x (B×in), h (B×hidden) -> h' (B×hidden).
    pub fn step(&self, x: &Var, h: &Var) -> Result<Var> {
        let r = x
            .matmul(&self.w_xr)?
            .add(&h.matmul(&self.w_hr)?)?
            .add_rowvec(&self.b_r)?
            .sigmoid()?;
        let u = x
            .matmul(&self.w_xu)?
            .add(&h.matmul(&self.w_hu)?)?
            .add_rowvec(&self.b_u)?
            .sigmoid()?;
        let c = x
            .matmul(&self.w_xc)?
            .add(&r.mul(h)?.matmul(&self.w_hc)?)?
            .add_rowvec(&self.b_c)?
            .tanh()?;
        // h' = h + u ⊙ (c − h)
        h.add(&u.mul(&c.sub(h)?)?)
    }

    pub fn fields(&self) -> Vec<&Var> {
        vec![
            &self.w_xr, &self.w_hr, &self.b_r, &self.w_xu, &self.w_hu, &self.b_u, &self.w_xc,
            &self.w_hc, &self.b_c,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn zero_weights_keep_zero_state_at_zero() {
        let mut rng = Rng::new(1);
        let mut p = GruParams::init(3, 4, &mut rng);
        for f in p.fields_mut() {
            f.scale_in_place(0.0);
        }
        let tape = Tape::new();
        let vars = p.vars(&tape, false);
        let x = tape.constant(&Tensor::zeros(vec![2, 3]));
        let h = tape.constant(&Tensor::zeros(vec![2, 4]));
        let h2 = vars.step(&x, &h).unwrap();
        assert!(h2.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_shape_and_determinism() {
        let mut rng = Rng::new(2);
        let p = GruParams::init(5, 6, &mut rng);
        let run = || {
            let tape = Tape::new();
            let vars = p.vars(&tape, false);
            let x = tape.constant(&Tensor::filled(vec![3, 5], 0.25));
            let h = tape.constant(&Tensor::filled(vec![3, 6], -0.5));
            vars.step(&x, &h).unwrap().value()
        };
        let a = run();
        let b = run();
        assert_eq!(a.shape(), &[3, 6]);
        assert_eq!(a, b);
    }
}
