//! Synthetic data generators for the simulation studies: logistic and
//! Poisson GAMs with 4 active covariates out of p, and the
//! negative binomial variant. Streams come from seeded ChaCha20, with
//! test draws on a separate stream so train/test are independent.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Poisson as PoissonDist};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Bernoulli responses, eta = 5 sin(2 pi x1) - 4 cos(pi x2)
    /// + 1.5 e^{x3 - 1} - 2 x4^2.
    LogisticS5,
    /// Poisson responses, eta = 1.5 sin(2 pi x1) - cos(pi x2)
    /// + e^{x3} - x4^2.
    PoissonS5,
    /// NegBinomial(alpha = 1), eta = 1.5 sin(2 pi x1) - cos(pi x2)
    /// + e^{x3} - 2 x4^2.
    NegBinomialB1,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic-s5" => Ok(Scenario::LogisticS5),
            "poisson-s5" => Ok(Scenario::PoissonS5),
            "negbinomial-b1" => Ok(Scenario::NegBinomialB1),
            other => Err(Error::argument(format!(
                "unknown scenario '{other}' (expected logistic-s5, poisson-s5, negbinomial-b1)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::LogisticS5 => "logistic-s5",
            Scenario::PoissonS5 => "poisson-s5",
            Scenario::NegBinomialB1 => "negbinomial-b1",
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Scenario::LogisticS5 => Family::Binomial,
            Scenario::PoissonS5 => Family::Poisson,
            Scenario::NegBinomialB1 => Family::NegBinomial { alpha: 1.0 },
        }
    }

    /// Scenario-default sample size and dimension.
    pub fn default_dims(&self) -> (usize, usize) {
        match self {
            Scenario::LogisticS5 | Scenario::PoissonS5 => (100, 500),
            Scenario::NegBinomialB1 => (500, 50),
        }
    }

    /// True additive function on the link scale (depends on the first
    /// four covariates only).
    pub fn eta_true(&self, x_row: &[f64]) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let pi = std::f64::consts::PI;
        let (x1, x2, x3, x4) = (x_row[0], x_row[1], x_row[2], x_row[3]);
        match self {
            Scenario::LogisticS5 => {
                5.0 * (two_pi * x1).sin() - 4.0 * (pi * x2).cos() + 1.5 * (x3 - 1.0).exp()
                    - 2.0 * x4 * x4
            }
            Scenario::PoissonS5 => {
                1.5 * (two_pi * x1).sin() - (pi * x2).cos() + x3.exp() - x4 * x4
            }
            Scenario::NegBinomialB1 => {
                1.5 * (two_pi * x1).sin() - (pi * x2).cos() + x3.exp() - 2.0 * x4 * x4
            }
        }
    }

    pub fn true_support(&self) -> Vec<usize> {
        vec![0, 1, 2, 3]
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub x: Mat,
    pub y: Vec<f64>,
    pub eta_true: Vec<f64>,
}

fn sample_response(scenario: Scenario, eta: f64, rng: &mut ChaCha20Rng) -> f64 {
    match scenario {
        Scenario::LogisticS5 => {
            let p = 1.0 / (1.0 + (-eta).exp());
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
        Scenario::PoissonS5 => {
            let mu = eta.exp();
            PoissonDist::new(mu).map_or(0.0, |d| d.sample(rng))
        }
        Scenario::NegBinomialB1 => {
            // gamma-Poisson mixture: rate ~ Gamma(alpha, scale mu/alpha)
            let alpha = 1.0;
            let mu = eta.exp();
            let rate = GammaDist::new(alpha, mu / alpha).map_or(0.0, |d| d.sample(rng));
            if rate <= 0.0 {
                0.0
            } else {
                PoissonDist::new(rate).map_or(0.0, |d| d.sample(rng))
            }
        }
    }
}

fn generate(scenario: Scenario, n: usize, p: usize, rng: &mut ChaCha20Rng) -> Result<SimData> {
    if p < 4 {
        return Err(Error::argument("scenarios need at least 4 covariates"));
    }
    if n == 0 {
        return Err(Error::argument("n must be >= 1"));
    }
    let x = Mat::from_fn(n, p, |_, _| rng.random::<f64>());
    let mut eta = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..4).map(|j| x.get(i, j)).collect();
        eta.push(scenario.eta_true(&row));
    }
    let y = eta
        .iter()
        .map(|&e| sample_response(scenario, e, rng))
        .collect();
    Ok(SimData { x, y, eta_true: eta })
}

/// Training draw: deterministic in (scenario, n, p, seed).
pub fn gen(scenario: Scenario, n: usize, p: usize, seed: u64) -> Result<SimData> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    generate(scenario, n, p, &mut rng)
}

/// Fresh test draw on an independent stream of the same seed.
pub fn gen_test(scenario: Scenario, m: usize, p: usize, seed: u64) -> Result<SimData> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    generate(scenario, m, p, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_hand_values() {
        // logistic at x = (0.25, 0, 1, 0.5): 5 - 4 + 1.5 - 0.5 = 2
        let e = Scenario::LogisticS5.eta_true(&[0.25, 0.0, 1.0, 0.5]);
        assert!((e - 2.0).abs() < 1e-12);
        // poisson at the origin: 0 - 1 + 1 - 0 = 0
        let e = Scenario::PoissonS5.eta_true(&[0.0, 0.0, 0.0, 0.0]);
        assert!(e.abs() < 1e-12);
        let e = Scenario::NegBinomialB1.eta_true(&[0.0, 0.0, 0.0, 1.0]);
        assert!((e - (-1.0 + 1.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reproducible_and_disjoint_streams() {
        let a = gen(Scenario::PoissonS5, 20, 6, 9).unwrap();
        let b = gen(Scenario::PoissonS5, 20, 6, 9).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let t = gen_test(Scenario::PoissonS5, 20, 6, 9).unwrap();
        assert_ne!(a.x, t.x);
        // eta recomputable from x
        for i in 0..20 {
            let row: Vec<f64> = (0..4).map(|j| t.x.get(i, j)).collect();
            assert!((t.eta_true[i] - Scenario::PoissonS5.eta_true(&row)).abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_covariates_do_not_enter_eta() {
        let d = gen(Scenario::LogisticS5, 10, 8, 3).unwrap();
        for i in 0..10 {
            let row: Vec<f64> = (0..4).map(|j| d.x.get(i, j)).collect();
            assert_eq!(d.eta_true[i], Scenario::LogisticS5.eta_true(&row));
        }
    }

    #[test]
    fn logistic_balance_at_zero_eta() {
        // eta = 0 inputs: x1 = 0 (sin term 0), x2 = 0.5 (cos term 0),
        // x3 = 0, x4 with 1.5 e^{-1} - 2 x4^2 = 0
        let x4 = (1.5 * (-1.0f64).exp() / 2.0).sqrt();
        let row = [0.0, 0.5, 0.0, x4];
        assert!(Scenario::LogisticS5.eta_true(&row).abs() < 1e-12);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 10_000;
        let mut ones = 0usize;
        for _ in 0..n {
            if sample_response(Scenario::LogisticS5, 0.0, &mut rng) == 1.0 {
                ones += 1;
            }
        }
        let phat = ones as f64 / n as f64;
        // 3 sigma band around 0.5
        assert!((phat - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn negbinomial_overdispersed() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let eta = 1.0f64;
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_response(Scenario::NegBinomialB1, eta, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(var > mean, "var {var} should exceed mean {mean}");
        // and close to mu + mu^2 with alpha = 1
        let mu = eta.exp();
        assert!((mean - mu).abs() < 0.1 * mu);
        assert!((var - (mu + mu * mu)).abs() < 0.25 * (mu + mu * mu));
    }
}
