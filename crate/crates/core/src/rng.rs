//! Seeded noise sources. Every run owns one `ChaCha8Rng`; all randomness
//! (weight noise, Gumbel/logistic architecture noise, shuffles, environment
//! coin flips) is drawn from it in a fixed order so reruns are bit-identical.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Uniform draw in the open interval (0, 1).
fn open_uniform(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard Gumbel noise: -ln(-ln(U)).
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    -(-open_uniform(rng).ln()).ln()
}

/// Standard logistic noise: ln(U) - ln(1 - U).
pub fn logistic(rng: &mut impl Rng) -> f64 {
    let u = open_uniform(rng);
    u.ln() - (-u).ln_1p()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    Tensor::new(rows, cols, data).expect("normal_tensor shape")
}

pub fn gumbel_row(cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..cols).map(|_| gumbel(rng)).collect();
    Tensor::new(1, cols, data).expect("gumbel_row shape")
}

/// Uniform draw in (-a, a).
pub fn uniform_sym(a: f64, rng: &mut impl Rng) -> f64 {
    rng.gen_range(-a..a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(gumbel(&mut a).to_bits(), gumbel(&mut b).to_bits());
        }
    }

    #[test]
    fn gumbel_mean_is_euler_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| gumbel(&mut rng)).sum::<f64>() / n as f64;
        // E[Gumbel] = 0.5772...; std = pi/sqrt(6) ~ 1.28, so 4 sigma/sqrt(n) ~ 0.0115
        assert!((mean - 0.5772).abs() < 0.0115, "mean {}", mean);
    }

    #[test]
    fn logistic_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| logistic(&mut rng)).sum::<f64>() / n as f64;
        // std = pi/sqrt(3) ~ 1.81, 4 sigma/sqrt(n) ~ 0.0162
        assert!(mean.abs() < 0.0162, "mean {}", mean);
    }
}
