//! The unconditional quantile effect estimator and its plug-in inference.
//!
//! Pipeline: quantile -> bandwidth -> density -> propensity score -> series
//! regression of 1{Y <= y_tau} on (P, X) -> average derivatives -> variance.

use crate::data::Dataset;
use crate::error::{Result, UqeError};
use crate::normal;
use crate::propensity::{fit_mle, fit_series_ps, mle_influence, Link, PsModel};
use crate::series::{BasisSpec, PolyBasis, RidgeSystem, SeriesDesign, SeriesFit};
use crate::stats::{self, BandwidthRule, Kernel, Sample};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// |T1| below this is treated as no intervention.
pub const WEAK_INTERVENTION: f64 = 1e-6;
/// f_Y(y_tau) below this makes the estimate numerically meaningless.
pub const DENSITY_FLOOR: f64 = 1e-4;
/// Two-sided 5% critical value.
pub const CRITICAL_5PCT: f64 = 1.959964;

/// Propensity score estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsKind {
    Logit,
    Probit,
    Series,
}

impl PsKind {
    pub fn name(self) -> &'static str {
        match self {
            PsKind::Logit => "logit",
            PsKind::Probit => "probit",
            PsKind::Series => "series",
        }
    }
}

impl std::str::FromStr for PsKind {
    type Err = UqeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(PsKind::Logit),
            "probit" => Ok(PsKind::Probit),
            "series" => Ok(PsKind::Series),
            other => Err(UqeError::InvalidInput(format!(
                "unknown link '{other}' (expected logit, probit or series)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub tau: f64,
    pub bandwidth: BandwidthRule,
    pub link: PsKind,
    pub basis: BasisSpec,
    pub ci_level: f64,
    /// epsilon = factor * h in the y-direction centered difference.
    pub fd_epsilon_factor: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            bandwidth: BandwidthRule::Silverman,
            link: PsKind::Probit,
            basis: BasisSpec::cubic(),
            ci_level: 0.95,
            fd_epsilon_factor: 1.0,
        }
    }
}

impl EstimationConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        stats::check_tau(self.tau)?;
        self.basis.validate()?;
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(UqeError::InvalidInput(format!(
                "confidence level {} must lie in (0, 1)",
                self.ci_level
            )));
        }
        if !(self.fd_epsilon_factor > 0.0 && self.fd_epsilon_factor.is_finite()) {
            return Err(UqeError::InvalidInput(format!(
                "finite-difference factor {} must be positive",
                self.fd_epsilon_factor
            )));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(UqeError::InvalidInput(format!("bandwidth {h} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-observation influence components of the estimator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfluenceComponents {
    /// K_h(Y - y_tau) - f_hat
    pub psi_f: Vec<f64>,
    /// (tau - 1{Y <= y_tau}) / f_hat
    pub psi_q: Vec<f64>,
    /// dP/dz1 - T1
    pub psi_dp: Vec<f64>,
    /// Estimation effect of the propensity score on T1: G' psi_alpha for the
    /// parametric score, -(D - P) nu_W for the series score.
    pub psi_alpha_term: Vec<f64>,
    /// dm/dz1 - T2
    pub psi_dm: Vec<f64>,
    /// -(1{Y <= y_tau} - m) nu
    pub psi_m: Vec<f64>,
    /// E[d f_{Y|W~}(y_tau) / d z1], multiplies psi_q in the T2 expansion.
    pub psi_q_scale: f64,
}

impl InfluenceComponents {
    pub fn n(&self) -> usize {
        self.psi_f.len()
    }

    fn check(&self) {
        let n = self.n();
        for len in [self.psi_q.len(), self.psi_dp.len(), self.psi_alpha_term.len(), self.psi_dm.len(), self.psi_m.len()] {
            assert_eq!(len, n, "influence components must share one length");
        }
    }

    /// Influence of T2: psi_dm + psi_m + scale * psi_q.
    pub fn t2_influence(&self) -> Vec<f64> {
        self.check();
        (0..self.n())
            .map(|i| self.psi_dm[i] + self.psi_m[i] + self.psi_q_scale * self.psi_q[i])
            .collect()
    }
}

/// Plug-in quantities multiplying the influence components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prefactors {
    pub t1: f64,
    pub t2: f64,
    pub f_hat: f64,
    pub f_prime: f64,
}

/// psi_Pi per observation.
pub fn influence_pi(c: &InfluenceComponents, q: &Prefactors) -> Vec<f64> {
    c.check();
    let a = q.t2 / (q.f_hat * q.f_hat * q.t1);
    let b = q.t2 / (q.f_hat * q.t1 * q.t1);
    let m = 1.0 / (q.f_hat * q.t1);
    (0..c.n())
        .map(|i| {
            a * c.psi_f[i] + a * q.f_prime * c.psi_q[i] + b * (c.psi_dp[i] + c.psi_alpha_term[i])
                - m * (c.psi_dm[i] + c.psi_m[i] + c.psi_q_scale * c.psi_q[i])
        })
        .collect()
}

/// V_tau = (h / n) sum psi_Pi^2.
pub fn variance_estimate(c: &InfluenceComponents, q: &Prefactors, h: f64, n: usize) -> f64 {
    let psi = influence_pi(c, q);
    h * psi.iter().map(|v| v * v).sum::<f64>() / n as f64
}

/// pi_hat +/- z * sqrt(v / (n h)).
pub fn confidence_interval(pi_hat: f64, v_tau: f64, n: usize, h: f64, level: f64) -> (f64, f64) {
    let half = normal::two_sided_critical(level) * (v_tau / (n as f64 * h)).sqrt();
    (pi_hat - half, pi_hat + half)
}

/// T1 = n^-1 sum dP/dz1.
pub fn estimate_t1(data: &Dataset, ps: &PsModel) -> Result<f64> {
    check_t1(ps.average_derivative(data))
}

fn check_t1(t1: f64) -> Result<f64> {
    if !(t1.abs() >= WEAK_INTERVENTION) {
        return Err(UqeError::WeakIntervention { t1, threshold: WEAK_INTERVENTION });
    }
    Ok(t1)
}

/// T2 at `y_eval`: average z1-derivative of the series regression of
/// 1{Y <= y_eval} on (P, X).
pub fn estimate_t2(data: &Dataset, ps: &PsModel, config: &EstimationConfig, y_eval: f64) -> Result<(f64, SeriesFit)> {
    let (p, dp) = ps.evaluate(data);
    let design = SeriesDesign::new(data, p, dp, config.basis)?;
    let fit = design.fit(&indicator(data.y(), y_eval))?;
    Ok((design.average_derivative(&fit), fit))
}

fn indicator(y: &[f64], at: f64) -> Vec<f64> {
    y.iter().map(|&v| if v <= at { 1.0 } else { 0.0 }).collect()
}

/// E[d f_{Y|W~}(y) / d z1] as the centered difference of T2 at y +/- eps.
pub fn cond_density_deriv_mean(design: &SeriesDesign, y: &[f64], y_tau: f64, eps: f64) -> Result<f64> {
    let up = design.fit(&indicator(y, y_tau + eps))?;
    let dn = design.fit(&indicator(y, y_tau - eps))?;
    Ok((design.average_derivative(&up) - design.average_derivative(&dn)) / (2.0 * eps))
}

/// Everything that does not depend on tau: the propensity score, the series
/// design in (P, X), and the propensity contributions to the influence.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub ps: PsModel,
    pub t1: f64,
    pub design: SeriesDesign,
    /// Projection of the z1 log-density derivative on the (P, X) basis.
    pub nu: Vec<f64>,
    pub psi_dp: Vec<f64>,
    pub psi_alpha_term: Vec<f64>,
}

impl FirstStage {
    pub fn fit(data: &Dataset, config: &EstimationConfig) -> Result<Self> {
        config.validate()?;
        let ps = match config.link {
            PsKind::Logit => fit_mle(data, Link::Logit)?,
            PsKind::Probit => fit_mle(data, Link::Probit)?,
            PsKind::Series => fit_series_ps(data, config.basis)?,
        };
        let (p, dp) = ps.evaluate(data);
        let n = data.n() as f64;
        let t1 = check_t1(dp.iter().sum::<f64>() / n)?;
        let psi_dp: Vec<f64> = dp.iter().map(|v| v - t1).collect();
        let psi_alpha_term = match &ps {
            PsModel::Parametric { .. } => parametric_ps_term(data, &ps)?,
            PsModel::Series { basis, coef, .. } => series_ps_term(data, basis, coef, config.basis.lambda)?,
        };
        let design = SeriesDesign::new(data, p, dp, config.basis)?;
        let nu = design.log_density_projection();
        Ok(Self { ps, t1, design, nu, psi_dp, psi_alpha_term })
    }

    pub fn p(&self) -> &[f64] {
        &self.design.p
    }

    pub fn dp_dz1(&self) -> &[f64] {
        &self.design.dp_dz1
    }

    /// Range of the fitted propensity score.
    pub fn p_range(&self) -> (f64, f64) {
        let p = self.p();
        (p.iter().cloned().fold(f64::INFINITY, f64::min), p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Quantile, density and series stages at `config.tau`.
    pub fn at_tau(&self, data: &Dataset, config: &EstimationConfig) -> Result<TauStage> {
        config.validate()?;
        let tau = config.tau;
        let sample = Sample::new(data.y().to_vec())?;
        let y_tau = stats::empirical_quantile(&sample, tau)?;
        let h = config.bandwidth.bandwidth(&sample)?;
        let f_hat = stats::kde(&sample, y_tau, h)?;
        if !(f_hat > DENSITY_FLOOR) {
            return Err(UqeError::DegenerateDensity { f_hat, threshold: DENSITY_FLOOR });
        }
        let f_prime = stats::kde_derivative(&sample, y_tau, h)?;

        let target = indicator(data.y(), y_tau);
        let fit = self.design.fit(&target)?;
        let fitted = self.design.fitted(&fit);
        let dm = self.design.fitted_dz1(&fit);
        let n = data.n() as f64;
        let t2 = dm.iter().sum::<f64>() / n;
        let psi_q_scale = cond_density_deriv_mean(&self.design, data.y(), y_tau, config.fd_epsilon_factor * h)?;

        let kernel = Kernel::Gaussian;
        let components = InfluenceComponents {
            psi_f: data.y().iter().map(|&v| kernel.eval((v - y_tau) / h, 0) / h - f_hat).collect(),
            psi_q: target.iter().map(|ind| (tau - ind) / f_hat).collect(),
            psi_dp: self.psi_dp.clone(),
            psi_alpha_term: self.psi_alpha_term.clone(),
            psi_dm: dm.iter().map(|v| v - t2).collect(),
            psi_m: (0..data.n()).map(|i| -(target[i] - fitted[i]) * self.nu[i]).collect(),
            psi_q_scale,
        };
        Ok(TauStage {
            tau,
            y_tau,
            h,
            f_hat,
            f_prime,
            t1: self.t1,
            t2,
            fit,
            components,
            ci_level: config.ci_level,
            ps_kind: self.ps.kind(),
            clamp_rate: self.ps.clamp_rate(),
        })
    }

    /// MTE_tau(u) = -(1/f_hat) * mean over X of dm/dp(u, X_i) on a grid of u.
    pub fn mte_curve(&self, stage: &TauStage, u_grid: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = self.p_range();
        let n = self.design.n();
        u_grid
            .iter()
            .map(|&u| {
                if !(u >= lo && u <= hi) {
                    return Err(UqeError::Extrapolation { u, lo, hi });
                }
                let s: f64 = (0..n).map(|i| stage.fit.dpredict_dp(u, &self.design.x_row(i))).sum();
                Ok(-s / (n as f64 * stage.f_hat))
            })
            .collect()
    }

    /// Mean effect T2m / T1 from the series regression of Y itself.
    pub fn mean_effect(&self, data: &Dataset, level: f64) -> Result<MeanEffectEstimate> {
        let fit = self.design.fit(data.y())?;
        let fitted = self.design.fitted(&fit);
        let dm = self.design.fitted_dz1(&fit);
        let n = data.n();
        let nf = n as f64;
        let t2m = dm.iter().sum::<f64>() / nf;
        let t1 = self.t1;
        let estimate = t2m / t1;
        let influence: Vec<f64> = (0..n)
            .map(|i| {
                let psi_m = -(data.y()[i] - fitted[i]) * self.nu[i];
                ((dm[i] - t2m) + psi_m) / t1 - t2m / (t1 * t1) * (self.psi_dp[i] + self.psi_alpha_term[i])
            })
            .collect();
        let variance = influence.iter().map(|v| v * v).sum::<f64>() / nf;
        let se = (variance / nf).sqrt();
        let z = normal::two_sided_critical(level);
        Ok(MeanEffectEstimate {
            estimate,
            t1,
            t2m,
            variance,
            se,
            ci: (estimate - z * se, estimate + z * se),
            level,
            n,
            influence,
        })
    }
}

fn parametric_ps_term(data: &Dataset, ps: &PsModel) -> Result<Vec<f64>> {
    let psi_alpha = mle_influence(ps, data)?;
    let k = psi_alpha.ncols();
    let n = data.n();
    let mut g = DVector::zeros(k);
    for i in 0..n {
        let d2 = ps.d2p_dz1_dalpha(&data.z_row(i), &data.x_row(i))?;
        g += DVector::from_vec(d2);
    }
    g /= n as f64;
    Ok((&psi_alpha * g).iter().copied().collect())
}

/// -(D - P) nu_W with nu_W the series projection of the z1 log-density
/// derivative on the propensity basis in W. The residual uses the unclamped
/// projection so that it stays orthogonal to the basis.
fn series_ps_term(data: &Dataset, basis: &PolyBasis, coef: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = data.n();
    let j = basis.len();
    let mut rows = DMatrix::zeros(n, j);
    let mut moment = vec![0.0; j];
    for i in 0..n {
        let mut w = data.z_row(i);
        w.extend(data.x_row(i));
        for (c, v) in basis.row(&w).into_iter().enumerate() {
            rows[(i, c)] = v;
        }
        for (c, v) in basis.row_d0(&w).into_iter().enumerate() {
            moment[c] += v / n as f64;
        }
    }
    let system = RidgeSystem::new(&rows, lambda)?;
    let b = DVector::from_vec(system.solve_raw_moment(&moment));
    let nu_w = -(&rows * b);
    let p = &rows * DVector::from_column_slice(coef);
    Ok((0..n).map(|i| -(data.d()[i] as f64 - p[i]) * nu_w[i]).collect())
}

/// Per-tau quantities shared by the point estimate and the no-effect test.
#[derive(Debug, Clone)]
pub struct TauStage {
    pub tau: f64,
    pub y_tau: f64,
    pub h: f64,
    pub f_hat: f64,
    pub f_prime: f64,
    pub t1: f64,
    pub t2: f64,
    pub fit: SeriesFit,
    pub components: InfluenceComponents,
    pub ci_level: f64,
    pub ps_kind: &'static str,
    pub clamp_rate: f64,
}

impl TauStage {
    pub fn n(&self) -> usize {
        self.components.n()
    }

    pub fn prefactors(&self) -> Prefactors {
        Prefactors { t1: self.t1, t2: self.t2, f_hat: self.f_hat, f_prime: self.f_prime }
    }

    pub fn estimate(&self) -> Result<UqeEstimate> {
        let n = self.n();
        let pi_hat = -self.t2 / (self.f_hat * self.t1);
        let residual = pi_hat * self.f_hat * self.t1 + self.t2;
        if !(residual.abs() <= 1e-12 * self.t2.abs().max(1e-300) + 1e-15) {
            return Err(UqeError::InternalConsistency(format!(
                "pi * f * T1 + T2 = {residual:e}"
            )));
        }
        let q = self.prefactors();
        let influence = influence_pi(&self.components, &q);
        let v_tau = self.h * influence.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if !v_tau.is_finite() {
            return Err(UqeError::DegenerateVariance(format!("V_tau = {v_tau}")));
        }
        let se = (v_tau / (n as f64 * self.h)).sqrt();
        Ok(UqeEstimate {
            tau: self.tau,
            y_tau: self.y_tau,
            f_hat: self.f_hat,
            f_prime: self.f_prime,
            h: self.h,
            t1: self.t1,
            t2: self.t2,
            pi_hat,
            v_tau,
            se,
            ci: confidence_interval(pi_hat, v_tau, n, self.h, self.ci_level),
            ci_level: self.ci_level,
            n,
            psi_q_scale: self.components.psi_q_scale,
            ps_kind: self.ps_kind.to_string(),
            clamp_rate: self.clamp_rate,
            influence,
        })
    }

    /// sqrt(n) T2 / sqrt(V2) with V2 = mean (psi_dm + psi_m + scale psi_q)^2.
    pub fn no_effect_test(&self) -> Result<NoEffectTest> {
        let psi = self.components.t2_influence();
        let n = psi.len() as f64;
        let v2 = psi.iter().map(|v| v * v).sum::<f64>() / n;
        if !(v2 > 0.0 && v2.is_finite()) {
            return Err(UqeError::DegenerateVariance(format!("V2 = {v2}")));
        }
        let statistic = n.sqrt() * self.t2 / v2.sqrt();
        Ok(NoEffectTest {
            tau: self.tau,
            t2: self.t2,
            v2,
            statistic,
            p_value: 2.0 * normal::sf(statistic.abs()),
            reject_5pct: statistic.abs() > CRITICAL_5PCT,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UqeEstimate {
    pub tau: f64,
    pub y_tau: f64,
    pub f_hat: f64,
    pub f_prime: f64,
    pub h: f64,
    pub t1: f64,
    pub t2: f64,
    pub pi_hat: f64,
    pub v_tau: f64,
    /// sqrt(V_tau / (n h))
    pub se: f64,
    pub ci: (f64, f64),
    pub ci_level: f64,
    pub n: usize,
    pub psi_q_scale: f64,
    pub ps_kind: String,
    pub clamp_rate: f64,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

impl UqeEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci.0 <= truth && truth <= self.ci.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoEffectTest {
    pub tau: f64,
    pub t2: f64,
    pub v2: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub reject_5pct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanEffectEstimate {
    pub estimate: f64,
    pub t1: f64,
    pub t2m: f64,
    pub variance: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub n: usize,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

/// Full pipeline at `config.tau`.
pub fn estimate_uqe(data: &Dataset, config: &EstimationConfig) -> Result<UqeEstimate> {
    FirstStage::fit(data, config)?.at_tau(data, config)?.estimate()
}

/// Returns the components alongside the estimate.
pub fn estimate_uqe_with_components(data: &Dataset, config: &EstimationConfig) -> Result<(UqeEstimate, InfluenceComponents)> {
    let stage = FirstStage::fit(data, config)?.at_tau(data, config)?;
    Ok((stage.estimate()?, stage.components))
}

pub fn test_no_effect(data: &Dataset, config: &EstimationConfig) -> Result<NoEffectTest> {
    FirstStage::fit(data, config)?.at_tau(data, config)?.no_effect_test()
}

pub fn mte_tau_curve(data: &Dataset, config: &EstimationConfig, u_grid: &[f64]) -> Result<Vec<f64>> {
    let first = FirstStage::fit(data, config)?;
    let stage = first.at_tau(data, config)?;
    first.mte_curve(&stage, u_grid)
}

pub fn estimate_mean_effect(data: &Dataset, config: &EstimationConfig) -> Result<MeanEffectEstimate> {
    FirstStage::fit(data, config)?.mean_effect(data, config.ci_level)
}
