use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};

/// Two-class Gumbel-Softmax with logits `(x, 0)`: the probability of the
/// "spike" class, `exp((x+g1)/tau) / (exp((x+g1)/tau) + exp(g2/tau))`.
#[inline]
pub fn gumbel_pair(x: f64, g1: f64, g2: f64, tau: f64) -> f64 {
    let z = (x + g1 - g2) / tau;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`gumbel_pair`] with respect to `x`, from its output.
#[inline]
pub fn gumbel_pair_grad(soft: f64, tau: f64) -> f64 {
    soft * (1.0 - soft) / tau
}

/// One draw of the two Gumbel(0, 1) variables per element.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl GumbelNoise {
    pub fn sample<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let dist = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
        let mut g1 = Vec::with_capacity(n);
        let mut g2 = Vec::with_capacity(n);
        for _ in 0..n {
            g1.push(dist.sample(rng));
            g2.push(dist.sample(rng));
        }
        GumbelNoise { g1, g2 }
    }

    /// Noise-free relaxation (plain sigmoid of `x / tau`).
    pub fn zeros(n: usize) -> Self {
        GumbelNoise {
            g1: vec![0.0; n],
            g2: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g1.is_empty()
    }
}

pub fn gumbel_softmax(real: &[f64], tau: f64, noise: &GumbelNoise) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Param(format!("temperature {tau} must be positive")));
    }
    if noise.len() != real.len() {
        return Err(Error::Shape(format!(
            "{} noise pairs for {} logits",
            noise.len(),
            real.len()
        )));
    }
    Ok(real
        .iter()
        .zip(noise.g1.iter().zip(&noise.g2))
        .map(|(&x, (&g1, &g2))| gumbel_pair(x, g1, g2, tau))
        .collect())
}

pub fn gumbel_softmax_seeded(real: &[f64], tau: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gumbel_softmax(real, tau, &GumbelNoise::sample(real.len(), &mut rng))
}

/// Hard threshold at 0.5 (ties go to 1). Its backward pass is the identity.
pub fn ste_binarize(soft: &[f64]) -> Vec<u8> {
    soft.iter().map(|&s| (s >= 0.5) as u8).collect()
}

/// Real-valued logits relaxed through Gumbel-Softmax with a temperature and
/// a private, seeded noise stream.
#[derive(Clone, Debug)]
pub struct SoftInput {
    pub real: Vec<f64>,
    pub tau: f64,
    rng: ChaCha8Rng,
}

impl SoftInput {
    pub fn new(real: Vec<f64>, tau: f64, noise_seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Param(format!("temperature {tau} must be positive")));
        }
        Ok(SoftInput {
            real,
            tau,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        })
    }

    /// Draws fresh noise and returns the relaxed values.
    pub fn relax(&mut self) -> Vec<f64> {
        let noise = GumbelNoise::sample(self.real.len(), &mut self.rng);
        gumbel_softmax(&self.real, self.tau, &noise).expect("tau checked at construction")
    }

    /// Chain rule from a gradient on the relaxed values back to the logits.
    pub fn backprop(&self, soft: &[f64], grad_soft: &[f64]) -> Vec<f64> {
        soft.iter()
            .zip(grad_soft)
            .map(|(&s, &g)| g * gumbel_pair_grad(s, self.tau))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn symmetric_noise_at_zero_is_one_half() {
        assert_eq!(gumbel_pair(0.0, 0.3, 0.3, 1.0), 0.5);
        assert_eq!(gumbel_pair(0.0, -1.7, -1.7, 0.2), 0.5);
    }

    #[test]
    fn low_temperature_gives_hard_samples() {
        for (x, g1, g2) in [(0.3, 0.1, -0.2), (-0.3, 0.1, 0.5), (2.0, -1.0, 0.4)] {
            let s = gumbel_pair(x, g1, g2, 1e-6);
            let expected = if x + g1 - g2 > 0.0 { 1.0 } else { 0.0 };
            assert!((s - expected).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Gumbel::new(0.0, 1.0).unwrap();
        let h = 1e-5;
        for _ in 0..200 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let (g1, g2): (f64, f64) = (dist.sample(&mut rng), dist.sample(&mut rng));
            let s = gumbel_pair(x, g1, g2, 1.0);
            let analytic = gumbel_pair_grad(s, 1.0);
            let fd = (gumbel_pair(x + h, g1, g2, 1.0) - gumbel_pair(x - h, g1, g2, 1.0)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(1e-12);
            assert!(rel <= 1e-6, "x={x} analytic={analytic} fd={fd} rel={rel}");
        }
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        assert!(gumbel_softmax(&[0.0], 0.0, &GumbelNoise::zeros(1)).is_err());
        assert!(gumbel_softmax(&[0.0], -1.0, &GumbelNoise::zeros(1)).is_err());
        assert!(SoftInput::new(vec![0.0], 0.0, 1).is_err());
    }

    #[test]
    fn ste_threshold() {
        assert_eq!(ste_binarize(&[0.7, 0.3, 0.5, 0.4999999]), vec![1, 0, 1, 0]);
    }

    #[test]
    fn relax_then_binarize_is_binary_with_finite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real: Vec<f64> = (0..500).map(|_| rng.random_range(-1e3..1e3)).collect();
        for tau in [10.0, 1.0, 0.1, 1e-3] {
            let mut si = SoftInput::new(real.clone(), tau, 9).unwrap();
            let soft = si.relax();
            assert!(ste_binarize(&soft).iter().all(|&b| b <= 1));
            let g = si.backprop(&soft, &vec![1.0; soft.len()]);
            assert!(g.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn seeded_relaxation_is_reproducible() {
        let real = vec![0.1, -0.4, 2.0];
        assert_eq!(
            gumbel_softmax_seeded(&real, 0.5, 3).unwrap(),
            gumbel_softmax_seeded(&real, 0.5, 3).unwrap()
        );
    }
}
