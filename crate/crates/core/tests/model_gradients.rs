//! Finite-difference checks for the model-level differentiable paths:
//! decoder log-likelihood, the prior MLP, and the local energy, each with
//! respect to both inputs and parameters.

mod common;

use common::fd_over_params;
use ppsebm::diffcore::finite_diff_check;
use ppsebm::latent_ebm::PriorParams;
use ppsebm::seqmodel::{local_energy, local_energy_batch, DecoderParams};
use ppsebm::{Rng, Tape, Tensor};

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[test]
fn decoder_loglik_grad_wrt_z() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(200 + seed);
        let dec = DecoderParams::init(7, 4, 5, 3, &mut rng);
        let toks: Vec<usize> = (0..4).map(|_| rng.below(7)).collect();
        let z = rng.normal_tensor::<f64>(vec![3]);
        let err = finite_diff_check(
            |_, v| {
                let dvars = dec.vars(v.tape(), false);
                dvars.loglik_batch(&v.reshape(vec![1, 3])?, &[&toks])?.sum()
            },
            &z,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn decoder_loglik_grad_wrt_params() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(300 + seed);
        let dec = DecoderParams::init(6, 3, 4, 2, &mut rng);
        let toks: Vec<usize> = (0..5).map(|_| rng.below(6)).collect();
        let z = rng.normal_tensor::<f64>(vec![2]);
        let z2 = Tensor::from_vec(vec![1, 2], z.data().to_vec()).unwrap();
        let err = fd_over_params(
            &dec,
            |p| p.fields_mut(),
            |p| {
                let tape = Tape::new();
                let vars = p.vars(&tape, true);
                let zv = tape.constant(&z2);
                let loss = vars.loglik_batch(&zv, &[&toks]).unwrap().sum().unwrap();
                let grads = tape.backward(&loss).unwrap();
                vars.fields().iter().map(|v| grads.wrt(v).cloned()).collect()
            },
            |p| p.loglik(&toks, &z).unwrap(),
            EPS,
        );
        assert!(err <= TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn f_alpha_grad_wrt_z() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(400 + seed);
        let alpha = PriorParams::init(4, 8, &mut rng);
        let z = rng.normal_tensor::<f64>(vec![4]);
        let err = finite_diff_check(
            |tape, v| alpha.vars(tape, false).f_batch(&v.reshape(vec![1, 4])?)?.sum(),
            &z,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn f_alpha_grad_wrt_params() {
    for seed in 0..10u64 {
        let mut rng = Rng::new(500 + seed);
        let alpha = PriorParams::init(3, 8, &mut rng);
        let z = rng.normal_tensor::<f64>(vec![1, 3]);
        let err = fd_over_params(
            &alpha,
            |p| p.fields_mut(),
            |p| {
                let tape = Tape::new();
                let vars = p.vars(&tape, true);
                let zv = tape.constant(&z);
                let loss = vars.f_batch(&zv).unwrap().sum().unwrap();
                let grads = tape.backward(&loss).unwrap();
                vars.fields().iter().map(|v| grads.wrt(v).cloned()).collect()
            },
            |p| p.f_alpha_batch(&z).unwrap()[0],
            EPS,
        );
        assert!(err <= TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn prior_score_matches_fd_of_log_density() {
    // score = grad_z [f(z) - ||z||²/2]
    for seed in 0..10u64 {
        let mut rng = Rng::new(600 + seed);
        let alpha = PriorParams::init(3, 8, &mut rng);
        let z = rng.normal_tensor::<f64>(vec![3]);
        let score = alpha.prior_score(&z).unwrap();
        let eps = EPS;
        for i in 0..3 {
            let mut up = z.clone();
            up.data_mut()[i] += eps;
            let mut down = z.clone();
            down.data_mut()[i] -= eps;
            let g = |t: &Tensor| alpha.f_alpha(t).unwrap() - 0.5 * t.sq_norm();
            let central = (g(&up) - g(&down)) / (2.0 * eps);
            let err = (score.data()[i] - central).abs() / central.abs().max(1.0);
            assert!(err <= TOL, "seed {seed} coord {i}: err {err}");
        }
    }
}

#[test]
fn local_energy_grad_wrt_z_and_params() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(700 + seed);
        let dec = DecoderParams::init(6, 3, 4, 3, &mut rng);
        let x: Vec<usize> = (0..3).map(|_| rng.below(6)).collect();
        let z = rng.normal_tensor::<f64>(vec![3]);

        let err_z = finite_diff_check(
            |_, v| {
                let dvars = dec.vars(v.tape(), false);
                local_energy_batch(&dvars, &[&x], &v.reshape(vec![1, 3])?)?.sum()
            },
            &z,
            EPS,
        )
        .unwrap();
        assert!(err_z <= TOL, "seed {seed}: z err {err_z}");

        let z2 = Tensor::from_vec(vec![1, 3], z.data().to_vec()).unwrap();
        let err_p = fd_over_params(
            &dec,
            |p| p.fields_mut(),
            |p| {
                let tape = Tape::new();
                let vars = p.vars(&tape, true);
                let zv = tape.constant(&z2);
                let loss = local_energy_batch(&vars, &[&x], &zv).unwrap().sum().unwrap();
                let grads = tape.backward(&loss).unwrap();
                vars.fields().iter().map(|v| grads.wrt(v).cloned()).collect()
            },
            |p| local_energy(p, &x, &z).unwrap(),
            EPS,
        );
        assert!(err_p <= TOL, "seed {seed}: param err {err_p}");
    }
}
