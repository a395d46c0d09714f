//! Diagonal-Gaussian helpers shared by the model, training and evaluation.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Matrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A matrix of independent standard-normal draws.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Reparameterized sample `mu + sigma * eps`.
pub fn reparameterize(mu: &Matrix, sigma: &Matrix, eps: &Matrix) -> Matrix {
    assert_eq!(mu.dim(), eps.dim(), "noise shape must match mu");
    mu + &(sigma * eps)
}

/// `KL[N(mu, diag sigma^2) || N(0, I)]`, summed over every entry.
pub fn kl_to_standard_normal(mu: &Matrix, sigma: &Matrix) -> f64 {
    Zip::from(mu)
        .and(sigma)
        .fold(0.0, |acc, &m, &s| acc + 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
}

/// `KL[N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)]`, summed over every entry.
pub fn kl_between(mu_q: &Matrix, sigma_q: &Matrix, mu_p: &Matrix, sigma_p: &Matrix) -> f64 {
    Zip::from(mu_q)
        .and(sigma_q)
        .and(mu_p)
        .and(sigma_p)
        .fold(0.0, |acc, &m, &s, &m2, &s2| {
            acc + crate::autodiff::kl_term(m, s, m2, s2)
        })
}

/// Log density of `x` under `N(mu, diag sigma^2)`, summed over entries.
pub fn log_density(x: &Matrix, mu: &Matrix, sigma: &Matrix) -> f64 {
    Zip::from(x).and(mu).and(sigma).fold(0.0, |acc, &x, &m, &s| {
        let u = (x - m) / s;
        acc - 0.5 * (LN_2PI + u * u) - s.ln()
    })
}

/// Log density under the standard normal.
pub fn log_density_standard(x: &Matrix) -> f64 {
    x.iter().map(|&v| -0.5 * (LN_2PI + v * v)).sum()
}

/// `ln(mean(exp(xs)))`, stable.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (sum / xs.len() as f64).ln()
}
