//! Shared test support: quadrature oracles for 1-D latent targets and a
//! finite-difference helper over whole parameter structs. Everything here
//! is independent of the gradient/backward machinery it is used to check.

#![allow(dead_code)]

use ppsebm::Tensor;

/// Trapezoid quadrature of `h` under the unnormalized density exp(g) on a
/// uniform grid: returns E[h(z)] for p(z) ∝ exp(g(z)).
pub fn quad_expect<G, H>(g: G, h: H, lo: f64, hi: f64, points: usize) -> f64
where
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    assert!(points >= 3);
    let step = (hi - lo) / (points - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..points {
        let z = lo + step * i as f64;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let p = g(z).exp() * w;
        num += p * h(z);
        den += p;
    }
    num / den
}

/// Mean and variance of p(z) ∝ exp(g(z)) by quadrature.
pub fn quad_moments<G>(g: G, lo: f64, hi: f64, points: usize) -> (f64, f64)
where
    G: Fn(f64) -> f64 + Copy,
{
    let mean = quad_expect(g, |z| z, lo, hi, points);
    let var = quad_expect(g, |z| (z - mean) * (z - mean), lo, hi, points);
    (mean, var)
}

/// Log of the normalizer of exp(g(z)) dz by trapezoid quadrature.
pub fn quad_log_norm<G>(g: G, lo: f64, hi: f64, points: usize) -> f64
where
    G: Fn(f64) -> f64,
{
    let step = (hi - lo) / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let z = lo + step * i as f64;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        total += g(z).exp() * w;
    }
    (total * step).ln()
}

/// Standard normal log-density.
pub fn log_phi(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Finite-difference check over a whole parameter struct.
///
/// `analytic` produces one gradient tensor per field (tape side);
/// `forward` evaluates the scalar loss for a candidate struct (value side,
/// never touching the backward machinery); `fields_mut` exposes the
/// tensors in the same order the analytic gradients use. Returns the worst
/// `|analytic - central| / max(1, |central|)` over every coordinate.
pub fn fd_over_params<P, FM, FA, FF>(
    params: &P,
    fields_mut: FM,
    analytic: FA,
    forward: FF,
    eps: f64,
) -> f64
where
    P: Clone,
    FM: Fn(&mut P) -> Vec<&mut Tensor>,
    FA: FnOnce(&P) -> Vec<Option<Tensor>>,
    FF: Fn(&P) -> f64,
{
    let grads = analytic(params);
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let n_fields = grads.len();
    for fi in 0..n_fields {
        let numel = fields_mut(&mut probe)[fi].numel();
        for ci in 0..numel {
            let orig = fields_mut(&mut probe)[fi].data()[ci];
            fields_mut(&mut probe)[fi].data_mut()[ci] = orig + eps;
            let up = forward(&probe);
            fields_mut(&mut probe)[fi].data_mut()[ci] = orig - eps;
            let down = forward(&probe);
            fields_mut(&mut probe)[fi].data_mut()[ci] = orig;
            let central = (up - down) / (2.0 * eps);
            let a = grads[fi].as_ref().map_or(0.0, |g| g.data()[ci]);
            let err = (a - central).abs() / central.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
