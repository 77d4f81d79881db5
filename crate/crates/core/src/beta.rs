//! Gamma and Beta variates.
//!
//! Gamma draws use the Marsaglia–Tsang squeeze method; shapes below one are
//! boosted through `Gamma(a) = Gamma(a + 1) * U^(1/a)`. Draws are produced on
//! the log scale so that Beta ratios stay well defined even when both gamma
//! variates would underflow.

use rand::Rng;
use rand_distr::StandardNormal;

/// Natural log of a `Gamma(shape, 1)` variate. `shape` must be positive.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0 && shape.is_finite());
    if shape < 1.0 {
        let u: f64 = rng.random();
        return ln_gamma_variate(rng, shape + 1.0) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// One `Gamma(shape, 1)` variate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp()
}

/// One `Beta(a, b)` variate, composed from two gamma draws.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let lx = ln_gamma_variate(rng, a);
    let ly = ln_gamma_variate(rng, b);
    // x / (x + y) written as a logistic in the log-ratio
    1.0 / (1.0 + (ly - lx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn gamma_moments_match_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &shape in &[0.3, 1.0, 2.5, 40.0] {
            let xs: Vec<f64> = (0..200_000).map(|_| gamma(&mut rng, shape)).collect();
            let (m, v) = moments(&xs);
            // mean = var = shape for Gamma(shape, 1)
            let se = (shape / xs.len() as f64).sqrt();
            assert!((m - shape).abs() < 5.0 * se, "shape {shape}: mean {m}");
            assert!((v - shape).abs() / shape < 0.05, "shape {shape}: var {v}");
        }
    }

    #[test]
    fn beta_moments_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(a, b) in &[(0.5, 0.5), (2.0, 5.0), (30.0, 3.0)] {
            let xs: Vec<f64> = (0..200_000).map(|_| beta(&mut rng, a, b)).collect();
            let (m, v) = moments(&xs);
            let mean = a / (a + b);
            let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
            assert!((m - mean).abs() < 5.0 * (var / xs.len() as f64).sqrt());
            assert!((v - var).abs() / var < 0.05);
            assert!(xs.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn tiny_shapes_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = beta(&mut rng, 1e-3, 1e-3);
            assert!(x.is_finite() && (0.0..=1.0).contains(&x));
        }
    }
}
