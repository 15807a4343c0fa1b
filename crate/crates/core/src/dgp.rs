//! Gaussian threshold-crossing designs and their quadrature ground truth.
//!
//! Plain:     Y(0) = U0, Y(1) = beta + U1, D = 1{V <= Z}.
//! Covariate: Y(0) = X + U0, Y(1) = X + beta + U1, D = 1{V <= Z + X}.
//!
//! (U_d, V) are standard bivariate normal with correlation rho, built as
//! U_d = rho V + sqrt(1 - rho^2) e_d with independent e_0, e_1, so every
//! |rho| < 1 is admissible. Z and X are independent standard normals.
//!
//! All population quantities depend on W only through the index mu = mu(W).
//! Writing Y(d) = c mu + d beta + E_d with E_d independent of mu,
//! corr(E_d, V) = rho / sigma_e, the oracle integrates over mu and V only.

use crate::data::Dataset;
use crate::error::{Result, UqeError};
use crate::normal;
use crate::quadrature::{brent, integrate_adaptive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Integration range in standard deviations.
pub const SD_RANGE: f64 = 8.0;
pub const QUANTILE_TOL: f64 = 1e-10;
pub const QUANTILE_BRACKET: (f64, f64) = (-10.0, 10.0);
pub const IDENTITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Covariate,
}

impl std::str::FromStr for Variant {
    type Err = UqeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "covariate" => Ok(Variant::Covariate),
            other => Err(UqeError::InvalidSpec(format!("unknown design '{other}' (expected plain or covariate)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub variant: Variant,
    pub beta: f64,
    pub rho: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn plain(beta: f64, rho: f64, seed: u64) -> Self {
        Self { variant: Variant::Plain, beta, rho, seed }
    }

    pub fn covariate(beta: f64, rho: f64, seed: u64) -> Self {
        Self { variant: Variant::Covariate, beta, rho, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(UqeError::InvalidSpec(format!("beta = {} is not finite", self.beta)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(UqeError::InvalidSpec(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        Ok(())
    }

    /// Variance of the selection index mu(W).
    pub fn index_variance(&self) -> f64 {
        match self.variant {
            Variant::Plain => 1.0,
            Variant::Covariate => 2.0,
        }
    }

    /// Loading c of the outcome on mu once X is integrated out given mu.
    pub fn index_loading(&self) -> f64 {
        match self.variant {
            Variant::Plain => 0.0,
            Variant::Covariate => 0.5,
        }
    }

    /// Variance of E_d = Y(d) - c mu - d beta.
    pub fn error_variance(&self) -> f64 {
        match self.variant {
            Variant::Plain => 1.0,
            // Var(X | mu) + Var(U) = 1/2 + 1
            Variant::Covariate => 1.5,
        }
    }
}

/// Latent draws behind a simulated dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Latent {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub v: Vec<f64>,
}

/// Simulated sample of size n, deterministic in `spec.seed`.
pub fn generate_sample(spec: &DgpSpec, n: usize) -> Result<Dataset> {
    Ok(generate_with_latent(spec, n)?.0)
}

pub fn generate_with_latent(spec: &DgpSpec, n: usize) -> Result<(Dataset, Latent)> {
    spec.validate()?;
    if n == 0 {
        return Err(UqeError::InvalidInput("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = (1.0 - spec.rho * spec.rho).sqrt();
    let covariate = spec.variant == Variant::Covariate;
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(if covariate { n } else { 0 });
    let mut latent = Latent { u0: Vec::with_capacity(n), u1: Vec::with_capacity(n), v: Vec::with_capacity(n) };
    for _ in 0..n {
        let zi: f64 = StandardNormal.sample(&mut rng);
        let xi: f64 = if covariate { StandardNormal.sample(&mut rng) } else { 0.0 };
        let v: f64 = StandardNormal.sample(&mut rng);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let u0 = spec.rho * v + s * e0;
        let u1 = spec.rho * v + s * e1;
        let di = (v <= zi + xi) as u8;
        y.push(xi + if di == 1 { spec.beta + u1 } else { u0 });
        d.push(di);
        z.push(zi);
        if covariate {
            x.push(xi);
        }
        latent.u0.push(u0);
        latent.u1.push(u1);
        latent.v.push(v);
    }
    let data = Dataset::from_columns(y, d, z, covariate.then_some(x))?;
    Ok((data, latent))
}

/// Quadrature resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    /// Initial Gauss-Legendre panels for the outer (index) integrals.
    pub outer_panels: usize,
    /// Initial panels for the inner (latent cost) integrals.
    pub inner_panels: usize,
    pub tol: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self { outer_panels: 1, inner_panels: 1, tol: 1e-11 }
    }
}

impl QuadSettings {
    pub fn doubled(self) -> Self {
        Self { outer_panels: 2 * self.outer_panels, inner_panels: 2 * self.inner_panels, tol: self.tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub beta: f64,
    pub rho: f64,
    pub tau: f64,
    pub y_tau: f64,
    pub f_y_tau: f64,
    pub pi_tau: f64,
    pub a_tau: f64,
    pub b1_tau: f64,
    pub b2_tau: f64,
}

impl OracleResult {
    /// B = A - Pi.
    pub fn bias(&self) -> f64 {
        self.a_tau - self.pi_tau
    }

    pub fn identity_residual(&self) -> f64 {
        self.a_tau - self.pi_tau - self.b1_tau - self.b2_tau
    }
}

/// Quadrature evaluation of the population quantities for one design.
#[derive(Debug, Clone)]
pub struct Oracle {
    spec: DgpSpec,
    settings: QuadSettings,
    sd_mu: f64,
    c: f64,
    sd_e: f64,
    /// sd of E_d given V
    s_e: f64,
    /// E[phi(mu)]
    norm: f64,
}

impl Oracle {
    pub fn new(spec: DgpSpec) -> Result<Self> {
        Self::with_settings(spec, QuadSettings::default())
    }

    pub fn with_settings(spec: DgpSpec, settings: QuadSettings) -> Result<Self> {
        spec.validate()?;
        let sd_e = spec.error_variance().sqrt();
        let mut oracle = Self {
            spec,
            settings,
            sd_mu: spec.index_variance().sqrt(),
            c: spec.index_loading(),
            sd_e,
            s_e: (spec.error_variance() - spec.rho * spec.rho).sqrt(),
            norm: 1.0,
        };
        oracle.norm = oracle.expect_mu(normal::pdf)?;
        Ok(oracle)
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    /// E over mu ~ N(0, sd_mu^2) of h(mu).
    fn expect_mu<F: Fn(f64) -> f64>(&self, h: F) -> Result<f64> {
        let sd = self.sd_mu;
        integrate_adaptive(
            |t| normal::pdf(t) * h(sd * t),
            -SD_RANGE,
            SD_RANGE,
            self.settings.outer_panels,
            self.settings.tol,
        )
    }

    /// Marginal weight g(mu) = f_V(mu) / E[f_V(mu(W))], the density of the
    /// index among marginal entrants relative to the population.
    pub fn marginal_weight(&self, mu: f64) -> f64 {
        normal::pdf(mu) / self.norm
    }

    /// E[f_V(mu(W))].
    pub fn weight_normalizer(&self) -> f64 {
        self.norm
    }

    /// Density of mu(W) among marginal entrants, g(mu) f_mu(mu).
    pub fn marginal_index_density(&self, mu: f64) -> f64 {
        self.marginal_weight(mu) * normal::pdf(mu / self.sd_mu) / self.sd_mu
    }

    /// integral of g(mu) f_mu(mu) d mu.
    pub fn marginal_weight_mass(&self) -> Result<f64> {
        self.expect_mu(|mu| self.marginal_weight(mu))
    }

    fn a(&self, y: f64, mu: f64, d: u8) -> f64 {
        y - self.c * mu - d as f64 * self.spec.beta
    }

    /// Pr(Y(d) <= y | V = mu, mu).
    fn f_marginal(&self, y: f64, mu: f64, d: u8) -> f64 {
        normal::cdf((self.a(y, mu, d) - self.spec.rho * mu) / self.s_e)
    }

    fn inner(&self, h: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        integrate_adaptive(h, a, b, self.settings.inner_panels, self.settings.tol).unwrap_or(f64::NAN)
    }

    /// Pr(Y(0) <= y | V > mu, mu).
    fn f_untreated(&self, y: f64, mu: f64) -> f64 {
        let a = self.a(y, mu, 0);
        let (rho, s) = (self.spec.rho, self.s_e);
        if rho == 0.0 {
            return normal::cdf(a / s);
        }
        if mu >= SD_RANGE {
            return normal::cdf((a - rho * mu) / s);
        }
        if mu <= 0.0 {
            let num = self.inner(|v| normal::cdf((a - rho * v) / s) * normal::pdf(v), mu, SD_RANGE);
            return num / normal::sf(mu);
        }
        // v = mu + t, weight phi(v)/phi(mu) = exp(-t(2 mu + t)/2)
        let t_max = -mu + (mu * mu + 2.0 * 40.0).sqrt();
        let w = |t: f64| (-0.5 * t * (2.0 * mu + t)).exp();
        let num = self.inner(|t| normal::cdf((a - rho * (mu + t)) / s) * w(t), 0.0, t_max);
        let den = self.inner(w, 0.0, t_max);
        num / den
    }

    /// Pr(Y(1) <= y | V <= mu, mu).
    fn f_treated(&self, y: f64, mu: f64) -> f64 {
        let a = self.a(y, mu, 1);
        let (rho, s) = (self.spec.rho, self.s_e);
        if rho == 0.0 {
            return normal::cdf(a / s);
        }
        if mu <= -SD_RANGE {
            return normal::cdf((a - rho * mu) / s);
        }
        if mu >= 0.0 {
            let num = self.inner(|v| normal::cdf((a - rho * v) / s) * normal::pdf(v), -SD_RANGE, mu);
            return num / normal::cdf(mu);
        }
        // v = mu - t, weight exp(-t(t - 2 mu)/2)
        let t_max = mu + (mu * mu + 2.0 * 40.0).sqrt();
        let w = |t: f64| (-0.5 * t * (t - 2.0 * mu)).exp();
        let num = self.inner(|t| normal::cdf((a - rho * (mu - t)) / s) * w(t), 0.0, t_max);
        let den = self.inner(w, 0.0, t_max);
        num / den
    }

    fn finite(value: f64, what: &str) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(UqeError::QuadratureFailure(format!("{what} did not converge")))
        }
    }

    /// F_Y(y).
    pub fn cdf_y(&self, y: f64) -> Result<f64> {
        let v = self.expect_mu(|mu| {
            normal::sf(mu) * self.f_untreated(y, mu) + normal::cdf(mu) * self.f_treated(y, mu)
        })?;
        Self::finite(v, "F_Y")
    }

    /// f_Y(y) = E[f_E(a0) Pr(V > mu | E0 = a0) + f_E(a1) Pr(V <= mu | E1 = a1)].
    pub fn density_y(&self, y: f64) -> Result<f64> {
        let (rho, se) = (self.spec.rho, self.sd_e);
        let var_e = se * se;
        let sd_v = (1.0 - rho * rho / var_e).sqrt();
        self.expect_mu(|mu| {
            let a0 = self.a(y, mu, 0);
            let a1 = self.a(y, mu, 1);
            normal::pdf(a0 / se) / se * normal::sf((mu - rho * a0 / var_e) / sd_v)
                + normal::pdf(a1 / se) / se * normal::cdf((mu - rho * a1 / var_e) / sd_v)
        })
    }

    /// y_tau with F_Y(y_tau) = tau.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        crate::stats::check_tau(tau)?;
        let (lo, hi) = QUANTILE_BRACKET;
        brent(|y| self.cdf_y(y).unwrap_or(f64::NAN) - tau, lo, hi, QUANTILE_TOL, 200)
    }

    /// Pi, A, B1, B2 at tau, with the identity A - Pi = B1 + B2 verified.
    pub fn evaluate(&self, tau: f64) -> Result<OracleResult> {
        let y = self.quantile(tau)?;
        let f = self.density_y(y)?;
        if !(f > 0.0) {
            return Err(UqeError::QuadratureFailure(format!("f_Y({y}) = {f}")));
        }
        let pi = self.expect_mu(|mu| {
            self.marginal_weight(mu) * (self.f_marginal(y, mu, 0) - self.f_marginal(y, mu, 1))
        })? / f;
        let a = self.expect_mu(|mu| self.f_untreated(y, mu) - self.f_treated(y, mu))? / f;
        let b1 = self.expect_mu(|mu| {
            (self.f_treated(y, mu) - self.f_untreated(y, mu)) * (self.marginal_weight(mu) - 1.0)
        })? / f;
        let b2 = self.expect_mu(|mu| {
            self.marginal_weight(mu)
                * ((self.f_untreated(y, mu) - self.f_marginal(y, mu, 0))
                    - (self.f_treated(y, mu) - self.f_marginal(y, mu, 1)))
        })? / f;
        let result = OracleResult {
            beta: self.spec.beta,
            rho: self.spec.rho,
            tau,
            y_tau: y,
            f_y_tau: f,
            pi_tau: Self::finite(pi, "Pi")?,
            a_tau: Self::finite(a, "A")?,
            b1_tau: Self::finite(b1, "B1")?,
            b2_tau: Self::finite(b2, "B2")?,
        };
        let residual = result.identity_residual();
        if residual.abs() > IDENTITY_TOL {
            return Err(UqeError::InternalConsistency(format!(
                "A - Pi - B1 - B2 = {residual:e} at tau = {tau}, rho = {}",
                self.spec.rho
            )));
        }
        Ok(result)
    }
}

/// Population Pi_tau together with y_tau and f_Y(y_tau).
pub fn true_uqe(spec: &DgpSpec, tau: f64) -> Result<OracleResult> {
    Oracle::new(*spec)?.evaluate(tau)
}

/// Probability limit of the unconditional quantile regression estimator.
pub fn apparent_effect(spec: &DgpSpec, tau: f64) -> Result<f64> {
    Ok(Oracle::new(*spec)?.evaluate(tau)?.a_tau)
}

pub fn bias_decomposition(spec: &DgpSpec, tau: f64) -> Result<OracleResult> {
    Oracle::new(*spec)?.evaluate(tau)
}

/// Decomposition over a tau grid for each rho, rows ordered rho-major.
pub fn bias_curve(variant: Variant, beta: f64, tau_grid: &[f64], rho_list: &[f64]) -> Result<Vec<OracleResult>> {
    let oracles = rho_list
        .iter()
        .map(|&rho| Oracle::new(DgpSpec { variant, beta, rho, seed: 0 }))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, f64)> = (0..oracles.len())
        .flat_map(|r| tau_grid.iter().map(move |&t| (r, t)))
        .collect();
    cells.par_iter().map(|&(r, tau)| oracles[r].evaluate(tau)).collect()
}
