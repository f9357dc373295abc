//! Quadrature oracles for the latent EBM: Langevin stationary moments,
//! the contrastive prior-update direction, and the partition-function
//! diagnostic, all on tractable 1-D targets.

mod common;

use common::{log_phi, quad_expect, quad_log_norm, quad_moments};
use ppsebm::latent_ebm::{langevin, log_z_mc, update_prior, PriorParams};
use ppsebm::{Rng, Tape, Tensor};

fn sample_moments(z: &Tensor) -> (f64, f64) {
    let n = z.numel() as f64;
    let mean = z.data().iter().sum::<f64>() / n;
    let var = z.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn langevin_matches_quadrature_for_quadratic_tilt() {
    // target ∝ exp(-z²/4) · φ(z) = exp(-3z²/4); quadrature says var = 2/3
    let (qmean, qvar) = quad_moments(|z| -0.25 * z * z + log_phi(z), -6.0, 6.0, 201);
    assert!(qmean.abs() < 1e-10);
    assert!((qvar - 2.0 / 3.0).abs() < 1e-6, "quadrature var {qvar}");

    let mut rng = Rng::new(42);
    let score = |z: &Tensor| {
        // ∇ log target = f'(z) - z = -z/2 - z
        let mut s = z.clone();
        s.scale_in_place(-1.5);
        Ok(s)
    };
    let z = langevin(score, 20_000, 1, 2000, 0.01, &mut rng).unwrap();
    let (mean, var) = sample_moments(&z);
    assert!((mean - qmean).abs() <= 0.02, "mean {mean}");
    assert!((var - qvar).abs() <= 0.03, "var {var} vs {qvar}");
}

#[test]
fn langevin_matches_quadrature_for_pure_gaussian() {
    let (qmean, qvar) = quad_moments(log_phi, -6.0, 6.0, 201);
    let mut rng = Rng::new(43);
    let score = |z: &Tensor| {
        let mut s = z.clone();
        s.scale_in_place(-1.0);
        Ok(s)
    };
    let z = langevin(score, 20_000, 1, 2000, 0.01, &mut rng).unwrap();
    let (mean, var) = sample_moments(&z);
    assert!((mean - qmean).abs() <= 0.02, "mean {mean}");
    assert!((var - qvar).abs() <= 0.03, "var {var} vs {qvar}");
}

#[test]
fn linear_one_dim_prior_update_is_mean_difference() {
    // f(z) = a·z through a hand-built "MLP" is awkward; check the identity
    // directly on the real update with batches where it reduces to the
    // documented rule for the final bias: grad_b3 f = 1 for every z, so the
    // contrastive term cancels exactly.
    let mut rng = Rng::new(5);
    let alpha = PriorParams::init(1, 8, &mut rng);
    let zp = rng.normal_tensor::<f64>(vec![64, 1]);
    let zm = rng.normal_tensor::<f64>(vec![64, 1]);
    let next = update_prior(&alpha, &zp, &zm, 0.3).unwrap();
    assert!((next.b3.data()[0] - alpha.b3.data()[0]).abs() < 1e-14);
}

/// Exact E[grad_alpha f] under weights w_j at grid points z_j, by one
/// backward pass over the weighted sum.
fn exact_grad_expectation(alpha: &PriorParams, zs: &[f64], weights: &[f64]) -> Vec<Tensor> {
    let tape = Tape::new();
    let vars = alpha.vars(&tape, true);
    let z = tape.constant(&Tensor::from_vec(vec![zs.len(), 1], zs.to_vec()).unwrap());
    let w = tape.constant(&Tensor::vector(weights.to_vec()));
    let loss = vars.f_batch(&z).unwrap().mul(&w).unwrap().sum().unwrap();
    let grads = tape.backward(&loss).unwrap();
    vars.fields()
        .iter()
        .map(|v| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(v.value().shape().to_vec()))
        })
        .collect()
}

#[test]
fn contrastive_update_matches_quadrature_gradient() {
    // 1-D latent model: prior ∝ exp(f(z)) φ(z) with the real MLP f, gaussian
    // observation x | z ~ N(z, 1). The exact marginal log-likelihood
    // gradient is E_posterior[grad f] − E_prior[grad f], computed by
    // quadrature on a 201-point grid over [−6, 6]; the Algorithm-side
    // estimate is the update_prior direction with long-run Langevin chains.
    let grid: Vec<f64> = (0..201).map(|i| -6.0 + 12.0 * i as f64 / 200.0).collect();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = Rng::new(100 + seed);
        let alpha = PriorParams::init(1, 6, &mut rng);
        // an informative observation: |x| in [1.5, 2.5] so the posterior
        // clearly separates from the prior
        let sign = if seed % 2 == 0 { 1.0 } else { -1.0 };
        let x_obs = sign * (1.5 + rng.uniform());

        let f_at = |z: f64| alpha.f_alpha(&Tensor::vector(vec![z])).unwrap();
        let prior_logp = |z: f64| f_at(z) + log_phi(z);
        let post_logp = |z: f64| prior_logp(z) - 0.5 * (x_obs - z) * (x_obs - z);

        let normalized = |logp: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut w: Vec<f64> = grid
                .iter()
                .enumerate()
                .map(|(i, &z)| {
                    let trap = if i == 0 || i == grid.len() - 1 { 0.5 } else { 1.0 };
                    logp(z).exp() * trap
                })
                .collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            w
        };
        let e_prior = exact_grad_expectation(&alpha, &grid, &normalized(&prior_logp));
        let e_post = exact_grad_expectation(&alpha, &grid, &normalized(&post_logp));

        let n = 12_288;
        let (k, s) = (300, 0.0125);
        let z_minus = langevin(|z| alpha.prior_score(z), n, 1, k, s, &mut rng).unwrap();
        let z_plus = langevin(
            |z| {
                let mut sc = alpha.prior_score(z)?;
                // + grad_z log N(x | z, 1) = (x − z)
                for (si, zi) in sc.data_mut().iter_mut().zip(z.data()) {
                    *si += x_obs - zi;
                }
                Ok(sc)
            },
            n,
            1,
            k,
            s,
            &mut rng,
        )
        .unwrap();

        let updated = update_prior(&alpha, &z_plus, &z_minus, 1.0).unwrap();

        let mut num = 0.0;
        let mut den = 0.0;
        for (((new, old), ep), epr) in updated
            .fields()
            .iter()
            .zip(alpha.fields())
            .zip(&e_post)
            .zip(&e_prior)
        {
            for i in 0..new.numel() {
                let mc = new.data()[i] - old.data()[i];
                let exact = ep.data()[i] - epr.data()[i];
                num += (mc - exact) * (mc - exact);
                den += exact * exact;
            }
        }
        let rel = (num / den).sqrt();
        worst = worst.max(rel);
        assert!(rel <= 0.05, "seed {seed}: relative error {rel:.4}");
    }
    println!("contrastive oracle: worst relative error {worst:.4} over 10 seeds");
}

#[test]
fn log_z_of_quadratic_tilt_matches_gaussian_integral() {
    // f(z) = -z²/4: Z = E_phi[exp(f)] = sqrt(2/3), so log Z ≈ -0.20273;
    // cross-checked against quadrature of exp(f + log φ).
    let expected = 0.5 * (2.0f64 / 3.0).ln();
    let by_quad = quad_log_norm(|z| -0.25 * z * z + log_phi(z), -8.0, 8.0, 1601);
    assert!((by_quad - expected).abs() < 1e-6, "quadrature {by_quad}");

    let mut rng = Rng::new(77);
    let est = log_z_mc(
        |z| Ok(z.data().iter().map(|v| -0.25 * v * v).collect()),
        1,
        1_000_000,
        &mut rng,
    )
    .unwrap();
    assert!((est - expected).abs() <= 0.01, "estimate {est} vs {expected}");
}

#[test]
fn scores_are_z_free_and_log_z_shifts_by_constant() {
    // adding a constant to f leaves prior and posterior scores bit-identical
    let mut rng = Rng::new(9);
    let alpha = PriorParams::init(3, 16, &mut rng);
    let mut shifted = alpha.clone();
    shifted.b3.data_mut()[0] += 3.25;

    let z = rng.normal_tensor::<f64>(vec![8, 3]);
    let s0 = alpha.prior_score(&z).unwrap();
    let s1 = shifted.prior_score(&z).unwrap();
    for (a, b) in s0.data().iter().zip(s1.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    let a = alpha.estimate_log_z(200_000, &mut Rng::new(1234)).unwrap();
    let b = shifted
        .estimate_log_z(200_000, &mut Rng::new(1234))
        .unwrap();
    assert!((b - a - 3.25).abs() < 1e-9, "shift {}", b - a);
}

#[test]
fn quad_expect_recovers_known_gaussian() {
    // oracle self-check: N(1, 0.25) moments
    let g = |z: f64| -2.0 * (z - 1.0) * (z - 1.0);
    let (m, v) = quad_moments(g, -6.0, 8.0, 401);
    assert!((m - 1.0).abs() < 1e-9);
    assert!((v - 0.25).abs() < 1e-9);
}
