//! Univariate primitives: empirical quantiles, the Gaussian kernel, kernel
//! density estimation and bandwidth rules.

use crate::error::{Result, UqeError};
use crate::normal;
use serde::{Deserialize, Serialize};

/// Observed outcomes. Keeps a sorted copy for quantile queries.
#[derive(Debug, Clone)]
pub struct Sample {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(UqeError::InvalidInput("sample is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(UqeError::InvalidInput(format!(
                "sample value at index {i} is not finite"
            )));
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { values, sorted })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Standard deviation with the n-1 denominator. Zero when n = 1.
    pub fn std_dev(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    /// Empirical CDF, #{Y_i <= y} / n.
    pub fn ecdf(&self, y: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= y) as f64 / self.len() as f64
    }
}

/// Smoothing kernel. Only the Gaussian family is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kernel {
    #[default]
    Gaussian,
}

impl Kernel {
    /// K(u), K'(u) or K''(u) depending on `order`.
    pub fn eval(self, u: f64, order: u8) -> f64 {
        match self {
            Kernel::Gaussian => {
                let k = normal::pdf(u);
                match order {
                    0 => k,
                    1 => -u * k,
                    2 => (u * u - 1.0) * k,
                    _ => panic!("kernel derivative order {order} is not supported"),
                }
            }
        }
    }

    /// Integral of K(u)^2.
    pub fn roughness(self) -> f64 {
        match self {
            Kernel::Gaussian => normal::pdf_squared_integral(),
        }
    }

    /// Second moment, integral of u^2 K(u).
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Gaussian => 1.0,
        }
    }
}

/// How the density bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// h = 1.06 * sd * n^(-1/5).
    Silverman,
    /// h = 1.06 * sd * n^(-exponent); exponents above 1/5 undersmooth.
    Undersmoothed { exponent: f64 },
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Silverman
    }
}

impl BandwidthRule {
    pub fn bandwidth(&self, sample: &Sample) -> Result<f64> {
        match *self {
            BandwidthRule::Silverman => silverman(sample),
            BandwidthRule::Undersmoothed { exponent } => {
                if !(exponent > 0.0 && exponent < 1.0 / 3.0) {
                    return Err(UqeError::InvalidInput(format!(
                        "bandwidth exponent {exponent} must lie in (0, 1/3)"
                    )));
                }
                let sd = checked_sd(sample)?;
                Ok(1.06 * sd * (sample.len() as f64).powf(-exponent))
            }
            BandwidthRule::Fixed(h) => {
                if h > 0.0 && h.is_finite() {
                    Ok(h)
                } else {
                    Err(UqeError::InvalidInput(format!("bandwidth {h} must be positive")))
                }
            }
        }
    }
}

fn checked_sd(sample: &Sample) -> Result<f64> {
    if sample.len() < 2 {
        return Err(UqeError::InvalidInput(
            "bandwidth rule needs at least two observations".into(),
        ));
    }
    let sd = sample.std_dev();
    if sd <= 0.0 {
        return Err(UqeError::InvalidInput("sample has zero variance".into()));
    }
    Ok(sd)
}

/// Left-continuous generalized inverse of the empirical CDF:
/// the smallest sample value y with #{Y_i <= y}/n >= tau.
pub fn empirical_quantile(sample: &Sample, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let n = sample.len();
    let sorted = sample.sorted();
    // Smallest k (1-based) with k/n >= tau. Start from ceil(n*tau) and fix up
    // floating point so that the comparison k/n >= tau is evaluated exactly as
    // written.
    let mut k = ((n as f64) * tau).ceil() as usize;
    k = k.clamp(1, n);
    while k > 1 && ((k - 1) as f64) / (n as f64) >= tau {
        k -= 1;
    }
    while k < n && (k as f64) / (n as f64) < tau {
        k += 1;
    }
    // Ties: the value at position k is the infimum; every tie shares it.
    Ok(sorted[k - 1])
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(UqeError::InvalidInput(format!("tau = {tau} must lie in (0, 1)")))
    }
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(UqeError::InvalidInput(format!("bandwidth {h} must be positive")))
    }
}

/// Gaussian kernel density estimate n^-1 sum K_h(Y_i - y).
pub fn kde(sample: &Sample, y: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    let s: f64 = sample
        .values()
        .iter()
        .map(|&v| Kernel::Gaussian.eval((v - y) / h, 0))
        .sum();
    Ok(s / (sample.len() as f64 * h))
}

/// Derivative of the kernel density estimate,
/// -(n h^2)^-1 sum K'((Y_i - y)/h).
pub fn kde_derivative(sample: &Sample, y: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    let s: f64 = sample
        .values()
        .iter()
        .map(|&v| Kernel::Gaussian.eval((v - y) / h, 1))
        .sum();
    Ok(-s / (sample.len() as f64 * h * h))
}

/// Silverman's rule of thumb, 1.06 * sd * n^(-1/5), sd with the n-1 denominator.
pub fn silverman(sample: &Sample) -> Result<f64> {
    let sd = checked_sd(sample)?;
    Ok(1.06 * sd * (sample.len() as f64).powf(-0.2))
}

/// Quantile influence value (tau - 1{y_i <= y_tau}) / f.
pub fn quantile_influence(y_i: f64, y_tau: f64, f_hat: f64, tau: f64) -> Result<f64> {
    if !(f_hat > 0.0) {
        return Err(UqeError::InvalidInput(format!(
            "density {f_hat} must be positive"
        )));
    }
    let ind = if y_i <= y_tau { 1.0 } else { 0.0 };
    Ok((tau - ind) / f_hat)
}
