//! Propensity score P(w) = Pr(D = 1 | W = w).

use crate::data::Dataset;
use crate::error::{Result, UqeError};
use crate::normal;
use crate::series::{dot, BasisSpec, PolyBasis, RidgeSystem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MLE_TOL: f64 = 1e-8;
pub const MLE_MAX_ITER: usize = 100;
/// Index coefficients beyond this are taken as evidence of separation.
pub const SEPARATION_BOUND: f64 = 50.0;
pub const PS_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl Link {
    /// L(t)
    pub fn cdf(self, t: f64) -> f64 {
        match self {
            Link::Logit => logistic(t),
            Link::Probit => normal::cdf(t),
        }
    }

    /// L'(t)
    pub fn density(self, t: f64) -> f64 {
        match self {
            Link::Logit => {
                let l = logistic(t);
                l * (1.0 - l)
            }
            Link::Probit => normal::pdf(t),
        }
    }

    /// L''(t)
    pub fn density_prime(self, t: f64) -> f64 {
        match self {
            Link::Logit => {
                let l = logistic(t);
                l * (1.0 - l) * (1.0 - 2.0 * l)
            }
            Link::Probit => normal::pdf_prime(t),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
        }
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Log of L(t) and 1 - L(t), stable in the tails.
fn log_probs(link: Link, t: f64) -> (f64, f64) {
    match link {
        Link::Logit => {
            // log L(t) = -log(1 + e^-t)
            let lp = -softplus(-t);
            let lq = -softplus(t);
            (lp, lq)
        }
        Link::Probit => (normal::cdf(t).max(f64::MIN_POSITIVE).ln(), normal::sf(t).max(f64::MIN_POSITIVE).ln()),
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// A fitted propensity model.
#[derive(Debug, Clone)]
pub enum PsModel {
    /// L(w'a) with w = (1, z, x).
    Parametric { link: Link, alpha: Vec<f64>, dz: usize, dx: usize, iterations: usize },
    /// Least-squares projection of D on a polynomial basis in (z, x), clamped.
    Series { basis: PolyBasis, coef: Vec<f64>, dz: usize, dx: usize, clamp_rate: f64 },
}

impl PsModel {
    /// Probit/logit model with given coefficients (intercept first).
    pub fn parametric(link: Link, alpha: Vec<f64>, dz: usize, dx: usize) -> Result<Self> {
        if alpha.len() != 1 + dz + dx || dz == 0 {
            return Err(UqeError::InvalidInput(format!(
                "coefficient vector of length {} does not match 1 + {dz} + {dx}",
                alpha.len()
            )));
        }
        Ok(PsModel::Parametric { link, alpha, dz, dx, iterations: 0 })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PsModel::Parametric { link, .. } => link.name(),
            PsModel::Series { .. } => "series",
        }
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        match self {
            PsModel::Parametric { alpha, .. } => Some(alpha),
            PsModel::Series { .. } => None,
        }
    }

    /// Fraction of fitted series probabilities that hit the clamp.
    pub fn clamp_rate(&self) -> f64 {
        match self {
            PsModel::Parametric { .. } => 0.0,
            PsModel::Series { clamp_rate, .. } => *clamp_rate,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            PsModel::Parametric { iterations, .. } => *iterations,
            PsModel::Series { .. } => 0,
        }
    }

    fn index(alpha: &[f64], z: &[f64], x: &[f64]) -> f64 {
        alpha[0] + dot(&alpha[1..1 + z.len()], z) + dot(&alpha[1 + z.len()..], x)
    }

    fn point(z: &[f64], x: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(z.len() + x.len());
        w.extend_from_slice(z);
        w.extend_from_slice(x);
        w
    }

    fn check_dims(&self, z: &[f64], x: &[f64]) {
        let (dz, dx) = match self {
            PsModel::Parametric { dz, dx, .. } | PsModel::Series { dz, dx, .. } => (*dz, *dx),
        };
        assert!(z.len() == dz && x.len() == dx, "point dimensions do not match the fitted model");
    }

    /// P(z, x).
    pub fn propensity(&self, z: &[f64], x: &[f64]) -> f64 {
        self.check_dims(z, x);
        match self {
            PsModel::Parametric { link, alpha, .. } => link.cdf(Self::index(alpha, z, x)),
            PsModel::Series { basis, coef, .. } => {
                dot(&basis.row(&Self::point(z, x)), coef).clamp(PS_CLAMP, 1.0 - PS_CLAMP)
            }
        }
    }

    /// dP/dz1. For the series model this is the derivative of the unclamped
    /// projection.
    pub fn dp_dz1(&self, z: &[f64], x: &[f64]) -> f64 {
        self.check_dims(z, x);
        match self {
            PsModel::Parametric { link, alpha, .. } => link.density(Self::index(alpha, z, x)) * alpha[1],
            PsModel::Series { basis, coef, .. } => dot(&basis.row_d0(&Self::point(z, x)), coef),
        }
    }

    /// Gradient in alpha of dP/dz1.
    pub fn d2p_dz1_dalpha(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(z, x);
        match self {
            PsModel::Parametric { link, alpha, .. } => {
                let t = Self::index(alpha, z, x);
                let lpp = link.density_prime(t) * alpha[1];
                let mut g: Vec<f64> = std::iter::once(1.0).chain(z.iter().copied()).chain(x.iter().copied()).map(|w| lpp * w).collect();
                g[1] += link.density(t);
                Ok(g)
            }
            PsModel::Series { .. } => Err(UqeError::Unsupported(
                "second derivatives in the index coefficients require a parametric propensity model".into(),
            )),
        }
    }

    /// Fitted probabilities and z1-derivatives at every observation.
    pub fn evaluate(&self, data: &Dataset) -> (Vec<f64>, Vec<f64>) {
        (0..data.n())
            .map(|i| {
                let z = data.z_row(i);
                let x = data.x_row(i);
                (self.propensity(&z, &x), self.dp_dz1(&z, &x))
            })
            .unzip()
    }

    /// Average of the z1-derivative over the sample, T1.
    pub fn average_derivative(&self, data: &Dataset) -> f64 {
        self.evaluate(data).1.iter().sum::<f64>() / data.n() as f64
    }
}

fn regressors(data: &Dataset) -> DMatrix<f64> {
    let (n, dz, dx) = (data.n(), data.dz(), data.dx());
    DMatrix::from_fn(n, 1 + dz + dx, |i, c| match c {
        0 => 1.0,
        c if c <= dz => data.z()[(i, c - 1)],
        c => data.x()[(i, c - 1 - dz)],
    })
}

fn log_likelihood(link: Link, w: &DMatrix<f64>, d: &[u8], alpha: &DVector<f64>) -> f64 {
    let idx = w * alpha;
    idx.iter()
        .zip(d)
        .map(|(t, &di)| {
            let (lp, lq) = log_probs(link, *t);
            if di == 1 {
                lp
            } else {
                lq
            }
        })
        .sum()
}

/// Per-observation score weight s_i with score = s_i * w_i, and the
/// Hessian weight h_i with Hessian = -sum h_i w_i w_i'.
fn score_and_hessian_weights(link: Link, t: f64, d: u8) -> (f64, f64) {
    match link {
        Link::Logit => {
            let l = logistic(t);
            (d as f64 - l, l * (1.0 - l))
        }
        Link::Probit => {
            // inverse Mills ratios in stable form
            let q = if d == 1 { 1.0 } else { -1.0 };
            let qt = q * t;
            let lambda = normal::pdf(qt) / normal::cdf(qt).max(f64::MIN_POSITIVE);
            let lambda = if normal::cdf(qt) < 1e-300 { -qt } else { lambda };
            (q * lambda, lambda * (lambda + qt))
        }
    }
}

/// Maximum-likelihood fit by Newton-Raphson with step-halving.
pub fn fit_mle(data: &Dataset, link: Link) -> Result<PsModel> {
    let w = regressors(data);
    let (n, k) = w.shape();
    let nf = n as f64;
    let d = data.d();
    if d.iter().all(|&v| v == d[0]) {
        return Err(UqeError::EstimationFailure {
            reason: "treatment has no variation".into(),
            iterations: 0,
            gradient_norm: f64::NAN,
        });
    }
    let mut alpha = DVector::zeros(k);
    let mut ll = log_likelihood(link, &w, d, &alpha);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=MLE_MAX_ITER {
        let idx = &w * &alpha;
        let mut grad = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let (s, h) = score_and_hessian_weights(link, idx[i], d[i]);
            let row = w.row(i).transpose();
            grad.axpy(s / nf, &row, 1.0);
            info.ger(h / nf, &row, &row, 1.0);
        }
        grad_norm = grad.amax();
        if grad_norm <= MLE_TOL {
            return Ok(PsModel::Parametric {
                link,
                alpha: alpha.iter().copied().collect(),
                dz: data.dz(),
                dx: data.dx(),
                iterations: iter,
            });
        }
        if iter == MLE_MAX_ITER {
            break;
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                return Err(UqeError::EstimationFailure {
                    reason: "information matrix is not positive definite".into(),
                    iterations: iter,
                    gradient_norm: grad_norm,
                })
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &alpha + &step * scale;
            let cand_ll = log_likelihood(link, &w, d, &cand);
            // near the optimum the likelihood change is below rounding, so
            // allow a relative slack of 1e-13
            if cand_ll.is_finite() && cand_ll >= ll - 1e-13 * ll.abs().max(1.0) {
                alpha = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if alpha.amax() > SEPARATION_BOUND {
            return Err(UqeError::EstimationFailure {
                reason: format!("index coefficients exceed {SEPARATION_BOUND} (separation)"),
                iterations: iter + 1,
                gradient_norm: grad_norm,
            });
        }
        if !accepted {
            return Err(UqeError::EstimationFailure {
                reason: "step-halving failed to increase the likelihood".into(),
                iterations: iter + 1,
                gradient_norm: grad_norm,
            });
        }
    }
    Err(UqeError::EstimationFailure {
        reason: format!("no convergence in {MLE_MAX_ITER} iterations"),
        iterations: MLE_MAX_ITER,
        gradient_norm: grad_norm,
    })
}

/// Per-observation MLE influence I^-1 L' w (D - L)/(L(1 - L)) with
/// I = n^-1 sum L'^2 w w'/(L(1 - L)). Returns an n x d_alpha matrix.
pub fn mle_influence(model: &PsModel, data: &Dataset) -> Result<DMatrix<f64>> {
    let (link, alpha) = match model {
        PsModel::Parametric { link, alpha, .. } => (*link, alpha),
        PsModel::Series { .. } => {
            return Err(UqeError::Unsupported("MLE influence requires a parametric propensity model".into()))
        }
    };
    let w = regressors(data);
    let (n, k) = w.shape();
    if alpha.len() != k {
        return Err(UqeError::InvalidInput("model and dataset dimensions differ".into()));
    }
    let a = DVector::from_column_slice(alpha);
    let idx = &w * &a;
    let mut info = DMatrix::zeros(k, k);
    let mut scores = DMatrix::zeros(n, k);
    for i in 0..n {
        let l = link.cdf(idx[i]).clamp(1e-300, 1.0 - 1e-16);
        let lp = link.density(idx[i]);
        let v = l * (1.0 - l);
        let row = w.row(i).transpose();
        info.ger(lp * lp / v / n as f64, &row, &row, 1.0);
        let s = lp * (data.d()[i] as f64 - l) / v;
        for c in 0..k {
            scores[(i, c)] = s * row[c];
        }
    }
    let inv = info.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| UqeError::EstimationFailure {
        reason: "singular information matrix".into(),
        iterations: 0,
        gradient_norm: f64::NAN,
    })?;
    Ok(scores * inv)
}

/// Series propensity score: least-squares projection of D on a polynomial
/// basis in (z, x), with predictions clamped to [1e-6, 1 - 1e-6].
pub fn fit_series_ps(data: &Dataset, spec: BasisSpec) -> Result<PsModel> {
    fit_series_ps_on(data, PolyBasis::new(spec, data.dz() + data.dx())?, spec.lambda)
}

fn fit_series_ps_on(data: &Dataset, basis: PolyBasis, lambda: f64) -> Result<PsModel> {
    let n = data.n();
    let j = basis.len();
    if j >= n {
        return Err(UqeError::InvalidInput(format!("basis dimension J = {j} must be below n = {n}")));
    }
    let mut rows = DMatrix::zeros(n, j);
    for i in 0..n {
        let mut w = data.z_row(i);
        w.extend(data.x_row(i));
        for (c, v) in basis.row(&w).into_iter().enumerate() {
            rows[(i, c)] = v;
        }
    }
    let system = RidgeSystem::new(&rows, lambda).map_err(|e| UqeError::EstimationFailure {
        reason: format!("series propensity design: {e}"),
        iterations: 0,
        gradient_norm: f64::NAN,
    })?;
    let target: Vec<f64> = data.d().iter().map(|&v| v as f64).collect();
    let coef = system.solve(&target)?;
    let fitted = &rows * DVector::from_column_slice(&coef);
    let clamped = fitted.iter().filter(|p| **p < PS_CLAMP || **p > 1.0 - PS_CLAMP).count();
    Ok(PsModel::Series { basis, coef, dz: data.dz(), dx: data.dx(), clamp_rate: clamped as f64 / n as f64 })
}
