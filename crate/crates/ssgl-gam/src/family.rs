//! Exponential-dispersion response families and their link functions.
//!
//! Each family bundles the cumulant b with its derivatives, the link g,
//! the composite xi = (g o b')^{-1} mapping the linear predictor to the
//! natural parameter, the variance function V, and the dispersion tau.
//! Gaussian/binomial/poisson use their canonical links, so xi is the
//! identity there; negative binomial and gamma use the log link, which
//! is non-canonical for both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear predictors are clamped to this range before computing IRLS
/// working quantities, so weights stay finite and positive. Converged
/// fits at realistic scales are unaffected.
pub const ETA_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// Gaussian with identity link; tau is the (known) variance.
    Gaussian { tau: f64 },
    /// Bernoulli with logit link.
    Binomial,
    /// Poisson with log link.
    Poisson,
    /// Negative binomial with log link and known size alpha.
    NegBinomial { alpha: f64 },
    /// Gamma with log link; known shape acts as a dispersion proxy
    /// (tau = 1/shape).
    Gamma { shape: f64 },
}

/// log(1 + e^u) without overflow.
fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// 1 / (1 + e^{-u}) without overflow.
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Family {
    pub fn gaussian() -> Self {
        Family::Gaussian { tau: 1.0 }
    }

    pub fn neg_binomial(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::argument("negbinomial size alpha must be > 0"));
        }
        Ok(Family::NegBinomial { alpha })
    }

    pub fn gamma(shape: f64) -> Result<Self> {
        if !(shape > 0.0) {
            return Err(Error::argument("gamma shape must be > 0"));
        }
        Ok(Family::Gamma { shape })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
            Family::NegBinomial { .. } => "negbinomial",
            Family::Gamma { .. } => "gamma",
        }
    }

    /// Dispersion tau; fixed and known.
    pub fn tau(&self) -> f64 {
        match self {
            Family::Gaussian { tau } => *tau,
            Family::Gamma { shape } => 1.0 / shape,
            _ => 1.0,
        }
    }

    pub fn is_canonical(&self) -> bool {
        matches!(
            self,
            Family::Gaussian { .. } | Family::Binomial | Family::Poisson
        )
    }

    fn check_theta(&self, theta: f64) -> Result<()> {
        let ok = match self {
            Family::Gaussian { .. } | Family::Binomial | Family::Poisson => theta.is_finite(),
            Family::NegBinomial { .. } | Family::Gamma { .. } => theta.is_finite() && theta < 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "theta = {theta} outside the natural-parameter domain of the {} family",
                self.name()
            )))
        }
    }

    /// Cumulant b(theta).
    pub fn cumulant(&self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian { .. } => 0.5 * theta * theta,
            Family::Binomial => softplus(theta),
            Family::Poisson => theta.exp(),
            Family::NegBinomial { alpha } => {
                // b(u) = -alpha log(1 - e^u), u < 0
                -alpha * (-theta.exp()).ln_1p()
            }
            Family::Gamma { .. } => -(-theta).ln(),
        })
    }

    /// Mean response b'(theta).
    pub fn mean(&self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian { .. } => theta,
            Family::Binomial => sigmoid(theta),
            Family::Poisson => theta.exp(),
            Family::NegBinomial { alpha } => {
                let e = theta.exp();
                alpha * e / (1.0 - e)
            }
            Family::Gamma { .. } => -1.0 / theta,
        })
    }

    /// b''(theta) > 0.
    pub fn variance_b(&self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian { .. } => 1.0,
            Family::Binomial => {
                let s = sigmoid(theta);
                s * (1.0 - s)
            }
            Family::Poisson => theta.exp(),
            Family::NegBinomial { alpha } => {
                let e = theta.exp();
                alpha * e / ((1.0 - e) * (1.0 - e))
            }
            Family::Gamma { .. } => 1.0 / (theta * theta),
        })
    }

    /// theta = xi(eta) = (g o b')^{-1}(eta).
    pub fn xi(&self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::argument(format!("non-finite linear predictor {eta}")));
        }
        Ok(match self {
            Family::Gaussian { .. } | Family::Binomial | Family::Poisson => eta,
            Family::NegBinomial { alpha } => {
                // -log(alpha e^{-eta} + 1) = -softplus(log(alpha) - eta)
                -softplus(alpha.ln() - eta)
            }
            Family::Gamma { .. } => -(-eta).exp(),
        })
    }

    /// d(xi)/d(eta).
    pub fn xi_prime(&self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::argument(format!("non-finite linear predictor {eta}")));
        }
        Ok(match self {
            Family::Gaussian { .. } | Family::Binomial | Family::Poisson => 1.0,
            Family::NegBinomial { alpha } => sigmoid(alpha.ln() - eta),
            Family::Gamma { .. } => (-eta).exp(),
        })
    }

    fn check_mean(&self, mu: f64) -> Result<()> {
        let ok = match self {
            Family::Gaussian { .. } => mu.is_finite(),
            Family::Binomial => mu > 0.0 && mu < 1.0,
            Family::Poisson | Family::NegBinomial { .. } | Family::Gamma { .. } => {
                mu.is_finite() && mu > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "mean {mu} outside the mean domain of the {} family",
                self.name()
            )))
        }
    }

    /// Link g(mu).
    pub fn link(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        Ok(match self {
            Family::Gaussian { .. } => mu,
            Family::Binomial => (mu / (1.0 - mu)).ln(),
            Family::Poisson | Family::NegBinomial { .. } | Family::Gamma { .. } => mu.ln(),
        })
    }

    /// Inverse link g^{-1}(eta); total for finite eta.
    pub fn link_inv(&self, eta: f64) -> f64 {
        match self {
            Family::Gaussian { .. } => eta,
            Family::Binomial => sigmoid(eta),
            Family::Poisson | Family::NegBinomial { .. } | Family::Gamma { .. } => eta.exp(),
        }
    }

    /// g'(mu).
    pub fn link_deriv(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        Ok(match self {
            Family::Gaussian { .. } => 1.0,
            Family::Binomial => 1.0 / (mu * (1.0 - mu)),
            Family::Poisson | Family::NegBinomial { .. } | Family::Gamma { .. } => 1.0 / mu,
        })
    }

    /// Variance function V(mu) = b''((b')^{-1}(mu)).
    pub fn var_fun(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        Ok(match self {
            Family::Gaussian { .. } => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::NegBinomial { alpha } => mu + mu * mu / alpha,
            Family::Gamma { .. } => mu * mu,
        })
    }

    /// Validate one response value against the family support.
    pub fn check_support(&self, y: f64, row: usize) -> Result<()> {
        let ok = match self {
            Family::Gaussian { .. } => y.is_finite(),
            Family::Binomial => y == 0.0 || y == 1.0,
            Family::Poisson | Family::NegBinomial { .. } => {
                y.is_finite() && y >= 0.0 && y.fract() == 0.0
            }
            Family::Gamma { .. } => y.is_finite() && y > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::data(format!(
                "response {y} at row {row} outside the support of the {} family",
                self.name()
            )))
        }
    }

    /// Log-likelihood (1/tau) sum_i [y_i xi(eta_i) - b(xi(eta_i))],
    /// dropping the c(y, tau) constant.
    pub fn loglik(&self, y: &[f64], eta: &[f64]) -> Result<f64> {
        if y.len() != eta.len() {
            return Err(Error::argument(format!(
                "loglik length mismatch: {} responses vs {} predictors",
                y.len(),
                eta.len()
            )));
        }
        let mut s = 0.0;
        for (i, (&yi, &ei)) in y.iter().zip(eta).enumerate() {
            self.check_support(yi, i)?;
            let theta = self.xi(ei)?;
            s += yi * theta - self.cumulant(theta)?;
        }
        Ok(s / self.tau())
    }

    /// Intercept of the null model (beta = 0): the link at the sample
    /// mean, clamped away from the mean-domain boundary.
    pub fn null_intercept(&self, y: &[f64]) -> f64 {
        let n = y.len().max(1) as f64;
        let ybar = y.iter().sum::<f64>() / n;
        let mu = match self {
            Family::Gaussian { .. } => ybar,
            Family::Binomial => ybar.clamp(1.0 / (n + 1.0), n / (n + 1.0)),
            _ => ybar.max(1e-8),
        };
        self.link(mu).unwrap_or(0.0)
    }
}
