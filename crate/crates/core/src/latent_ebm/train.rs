//! Composed EBM state and the sequential training loop.

use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::latent_ebm::langevin::{langevin, LangevinConfig};
use crate::latent_ebm::prior::PriorParams;
use crate::seqmodel::{CheckpointDoc, DecoderParams, GradBundle, InferenceNetParams};
use crate::{Tape, Tensor};

/// Training counters and rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainState {
    /// Global iteration counter.
    pub t: usize,
    /// Completed-task counter.
    pub m: usize,
    /// Prior model learning rate.
    pub eta0: f64,
    /// Generation model learning rate.
    pub eta1: f64,
    /// Batch size.
    pub batch: usize,
    /// Iterations per task.
    pub iters_per_task: usize,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            t: 0,
            m: 0,
            eta0: 1e-4,
            eta1: 1e-3,
            batch: 16,
            iters_per_task: 500,
        }
    }
}

/// Model dimensions shared by the three parameter groups.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EbmDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    pub prior_hidden: usize,
}

/// Composed parameters: prior MLP, decoder, inference encoder, counters.
#[derive(Debug, Clone)]
pub struct EBMState {
    pub alpha: PriorParams,
    pub decoder: DecoderParams,
    pub infer: InferenceNetParams,
    pub train: TrainState,
}

impl EBMState {
    pub fn new(dims: EbmDims, train: TrainState, rng: &mut Rng) -> Self {
        let alpha = PriorParams::init(dims.latent, dims.prior_hidden, rng);
        let decoder = DecoderParams::init(dims.vocab, dims.embed, dims.hidden, dims.latent, rng);
        let infer = InferenceNetParams::init(dims.vocab, dims.embed, dims.hidden, dims.latent, rng);
        EBMState {
            alpha,
            decoder,
            infer,
            train,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.alpha.latent_dim()
    }

    /// The latent dimension must agree across all three parameter groups.
    pub fn validate(&self) -> Result<()> {
        let d = self.alpha.latent_dim();
        if self.decoder.latent_dim() != d || self.infer.latent_dim() != d {
            return Err(CoreError::InvalidArgument(format!(
                "latent dims disagree: alpha {d}, decoder {}, inference {}",
                self.decoder.latent_dim(),
                self.infer.latent_dim()
            )));
        }
        Ok(())
    }

    /// Posterior score, rows aligned with z and xs:
    /// grad_z [ f(z) - ||z||²/2 + log p(x|z) ].
    pub fn posterior_score(&self, z: &Tensor, xs: &[&[usize]]) -> Result<Tensor> {
        let d = self.latent_dim();
        if z.shape() != [xs.len(), d] {
            return Err(CoreError::ShapeMismatch {
                op: "posterior_score",
                lhs: z.shape().to_vec(),
                rhs: vec![xs.len(), d],
            });
        }
        let tape = Tape::new();
        let avars = self.alpha.vars(&tape, false);
        let dvars = self.decoder.vars(&tape, false);
        let zv = tape.leaf(z.clone().with_grad(true));
        let f = avars.f_batch(&zv)?.sum()?;
        let ll = dvars.loglik_batch(&zv, xs)?.sum()?;
        let total = f.add(&ll)?;
        let grads = tape.backward(&total)?;
        let mut score = grads
            .wrt(&zv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(z.shape().to_vec()));
        score.add_scaled(z, -1.0);
        Ok(score)
    }

    pub fn all_finite(&self) -> bool {
        self.alpha.all_finite() && self.decoder.all_finite() && self.infer.all_finite()
    }

    pub fn write_into(&self, doc: &mut CheckpointDoc, prefix: &str) {
        self.alpha.write_into(doc, &format!("{prefix}alpha."));
        self.decoder.write_into(doc, &format!("{prefix}decoder."));
        self.infer.write_into(doc, &format!("{prefix}infer."));
    }

    pub fn read_from(doc: &CheckpointDoc, prefix: &str, train: TrainState) -> Result<Self> {
        Ok(EBMState {
            alpha: PriorParams::read_from(doc, &format!("{prefix}alpha."))?,
            decoder: DecoderParams::read_from(doc, &format!("{prefix}decoder."))?,
            infer: InferenceNetParams::read_from(doc, &format!("{prefix}infer."))?,
            train,
        })
    }
}

/// Contrastive ascent on the prior:
/// alpha' = alpha + eta0 * (1/b) * sum_i (grad f(z_i+) - grad f(z_i-)).
pub fn update_prior(
    alpha: &PriorParams,
    z_plus: &Tensor,
    z_minus: &Tensor,
    eta0: f64,
) -> Result<PriorParams> {
    if z_plus.shape() != z_minus.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "update_prior",
            lhs: z_plus.shape().to_vec(),
            rhs: z_minus.shape().to_vec(),
        });
    }
    let tape = Tape::new();
    let vars = alpha.vars(&tape, true);
    let zp = tape.constant(z_plus);
    let zm = tape.constant(z_minus);
    let objective = vars.f_batch(&zp)?.mean()?.sub(&vars.f_batch(&zm)?.mean()?)?;
    let mut grads = tape.backward(&objective)?;
    let mut next = alpha.clone();
    let mut bundle = GradBundle::new();
    bundle.push_all(next.fields_mut(), &vars.fields(), &mut grads, 1.0);
    bundle.apply_ascent(eta0);
    Ok(next)
}

/// Ascent on the generator's reconstruction log-likelihood:
/// beta' = beta + eta1 * (1/b) * sum_i grad log p(x_i | z_i+).
/// Also returns the mean reconstruction log-likelihood at the old beta.
pub fn update_generator(
    decoder: &DecoderParams,
    xs: &[&[usize]],
    z_plus: &Tensor,
    eta1: f64,
) -> Result<(DecoderParams, f64)> {
    if z_plus.shape() != [xs.len(), decoder.latent_dim()] {
        return Err(CoreError::ShapeMismatch {
            op: "update_generator",
            lhs: z_plus.shape().to_vec(),
            rhs: vec![xs.len(), decoder.latent_dim()],
        });
    }
    let tape = Tape::new();
    let vars = decoder.vars(&tape, true);
    let zp = tape.constant(z_plus);
    let objective = vars.loglik_batch(&zp, xs)?.mean()?;
    let mean_ll = objective.item();
    let mut grads = tape.backward(&objective)?;
    let mut next = decoder.clone();
    let mut bundle = GradBundle::new();
    bundle.push_all(next.fields_mut(), &vars.fields(), &mut grads, 1.0);
    bundle.apply_ascent(eta1);
    Ok((next, mean_ll))
}

/// One line of the EBM training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbmLogRecord {
    pub iteration: usize,
    pub task: String,
    /// Mean prior energy of the posterior samples: ||z||²/2 - f(z).
    pub mean_energy: f64,
    /// Mean log p(x | z+) over the batch before the generator step.
    pub mean_recon_loglik: f64,
}

/// Algorithm core: for each task in sequence, run `iters_per_task`
/// iterations of prior sampling, posterior sampling, prior update, and
/// generator update. Counters in `state.train` advance across calls, so
/// the harness can extend one EBM task by task.
pub fn train_ebm<F>(
    state: &mut EBMState,
    tasks: &[(String, Vec<Vec<usize>>)],
    cfg: &LangevinConfig,
    rng: &mut Rng,
    mut on_log: F,
) -> Result<()>
where
    F: FnMut(&EbmLogRecord),
{
    state.validate()?;
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(CoreError::InvalidArgument("train_ebm needs tasks".into()));
    }
    let d = state.latent_dim();
    let b = state.train.batch;
    for (task_name, data) in tasks {
        if data.is_empty() {
            return Err(CoreError::InvalidArgument(format!(
                "task `{task_name}` has no sequences"
            )));
        }
        for _ in 0..state.train.iters_per_task {
            state.train.t += 1;
            let xs: Vec<&[usize]> = (0..b)
                .map(|_| data[rng.below(data.len())].as_slice())
                .collect();

            let z_minus = langevin(|z| state.alpha.prior_score(z), b, d, cfg.k0, cfg.s0, rng)?;
            let z_plus = langevin(
                |z| state.posterior_score(z, &xs),
                b,
                d,
                cfg.k1,
                cfg.s1,
                rng,
            )?;

            state.alpha = update_prior(&state.alpha, &z_plus, &z_minus, state.train.eta0)?;
            let (next_decoder, mean_ll) =
                update_generator(&state.decoder, &xs, &z_plus, state.train.eta1)?;
            state.decoder = next_decoder;

            if !state.alpha.all_finite() || !state.decoder.all_finite() {
                return Err(CoreError::TrainingDiverged {
                    task: state.train.m + 1,
                    iteration: state.train.t,
                });
            }

            let f_vals = state.alpha.f_alpha_batch(&z_plus)?;
            let mean_energy = z_plus
                .data()
                .chunks(d)
                .zip(&f_vals)
                .map(|(row, f)| row.iter().map(|v| v * v).sum::<f64>() / 2.0 - f)
                .sum::<f64>()
                / b as f64;
            on_log(&EbmLogRecord {
                iteration: state.train.t,
                task: task_name.clone(),
                mean_energy,
                mean_recon_loglik: mean_ll,
            });
        }
        state.train.m += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_state(rng: &mut Rng) -> EBMState {
        let dims = EbmDims {
            vocab: 8,
            embed: 4,
            hidden: 6,
            latent: 3,
            prior_hidden: 8,
        };
        let train = TrainState {
            batch: 4,
            iters_per_task: 3,
            ..TrainState::default()
        };
        EBMState::new(dims, train, rng)
    }

    #[test]
    fn identical_batches_cancel_in_prior_update() {
        let mut rng = Rng::new(1);
        let state = tiny_state(&mut rng);
        let z = rng.normal_tensor::<f64>(vec![4, 3]);
        let next = update_prior(&state.alpha, &z, &z, 0.1).unwrap();
        for (a, b) in state.alpha.fields().iter().zip(next.fields()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn batch_size_mismatch_rejected() {
        let mut rng = Rng::new(2);
        let state = tiny_state(&mut rng);
        let zp = rng.normal_tensor::<f64>(vec![4, 3]);
        let zm = rng.normal_tensor::<f64>(vec![3, 3]);
        assert!(update_prior(&state.alpha, &zp, &zm, 0.1).is_err());
    }

    #[test]
    fn zero_rate_keeps_generator() {
        let mut rng = Rng::new(3);
        let state = tiny_state(&mut rng);
        let z = rng.normal_tensor::<f64>(vec![2, 3]);
        let xs: Vec<&[usize]> = vec![&[1, 2], &[5, 6, 7]];
        let (next, ll) = update_generator(&state.decoder, &xs, &z, 0.0).unwrap();
        assert!(ll <= 0.0);
        for (a, b) in state.decoder.fields().iter().zip(next.fields()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn zero_iterations_keeps_state() {
        let mut rng = Rng::new(4);
        let mut state = tiny_state(&mut rng);
        state.train.iters_per_task = 0;
        let before = state.decoder.embedding.clone();
        let tasks = vec![("toy".to_string(), vec![vec![1usize, 2, 3]])];
        train_ebm(
            &mut state,
            &tasks,
            &LangevinConfig::default(),
            &mut Rng::new(5),
            |_| {},
        )
        .unwrap();
        assert_eq!(state.decoder.embedding, before);
        assert_eq!(state.train.m, 1);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let mut rng = Rng::new(11);
            let mut state = tiny_state(&mut rng);
            let tasks = vec![(
                "toy".to_string(),
                vec![vec![1usize, 2, 3], vec![4, 5], vec![6, 7, 1, 2]],
            )];
            let mut records = Vec::new();
            train_ebm(
                &mut state,
                &tasks,
                &LangevinConfig::default(),
                &mut rng.derive("train"),
                |r| records.push(r.mean_recon_loglik.to_bits()),
            )
            .unwrap();
            let bits: Vec<u64> = state
                .decoder
                .embedding
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            (records, bits)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn posterior_score_equals_prior_score_plus_loglik_grad() {
        let mut rng = Rng::new(6);
        let state = tiny_state(&mut rng);
        let z = rng.normal_tensor::<f64>(vec![2, 3]);
        let xs: Vec<&[usize]> = vec![&[1, 2, 3], &[4, 5]];
        let post = state.posterior_score(&z, &xs).unwrap();
        let prior = state.alpha.prior_score(&z).unwrap();

        // grad_z of the reconstruction log-likelihood alone
        let tape = Tape::new();
        let dvars = state.decoder.vars(&tape, false);
        let zv = tape.leaf(z.clone().with_grad(true));
        let ll = dvars.loglik_batch(&zv, &xs).unwrap().sum().unwrap();
        let grads = tape.backward(&ll).unwrap();
        let gll = grads.wrt(&zv).unwrap();

        for i in 0..post.numel() {
            let diff = post.data()[i] - prior.data()[i];
            assert!((diff - gll.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_ignoring_z_makes_posterior_equal_prior_score() {
        let mut rng = Rng::new(7);
        let mut state = tiny_state(&mut rng);
        // zero the latent pathways: h0 map and the z-rows of the cell input
        state.decoder.w_h0.scale_in_place(0.0);
        state.decoder.b_h0.scale_in_place(0.0);
        let e = state.decoder.embed_dim();
        let h = state.decoder.hidden_dim();
        for w in [
            &mut state.decoder.gru.w_xr,
            &mut state.decoder.gru.w_xu,
            &mut state.decoder.gru.w_xc,
        ] {
            for row in e..w.shape()[0] {
                for col in 0..h {
                    w.data_mut()[row * h + col] = 0.0;
                }
            }
        }
        let z = rng.normal_tensor::<f64>(vec![2, 3]);
        let xs: Vec<&[usize]> = vec![&[1, 2], &[3, 4, 5]];
        let post = state.posterior_score(&z, &xs).unwrap();
        let prior = state.alpha.prior_score(&z).unwrap();
        for (a, b) in post.data().iter().zip(prior.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
