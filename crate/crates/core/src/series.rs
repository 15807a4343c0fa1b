//! Polynomial series regression with an optional ridge penalty.
//!
//! Design rows are plain monomials of a point `(p, x_1, .., x_k)` whose first
//! coordinate is the one the estimator differentiates (the propensity score
//! for the outcome regression, z1 for the series propensity score).
//! Non-constant columns are centered and scaled before solving; coefficients
//! are reported on the raw monomial scale.

use crate::data::Dataset;
use crate::error::{Result, UqeError};
use crate::propensity::PsModel;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Smallest admissible eigenvalue ratio of the penalized Gram matrix.
pub const CONDITION_FLOOR: f64 = 1e-12;

/// Basis configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: u32,
    /// Include cross terms up to total degree `degree`.
    pub interactions: bool,
    /// Ridge penalty on the standardized non-constant coefficients.
    pub lambda: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 3, interactions: true, lambda: 0.0 }
    }
}

impl BasisSpec {
    pub fn cubic() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(UqeError::InvalidInput("basis degree must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(UqeError::InvalidInput(format!(
                "ridge penalty {} must be nonnegative",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Monomial basis over a point of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasis {
    spec: BasisSpec,
    dim: usize,
    exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(spec: BasisSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        if dim == 0 {
            return Err(UqeError::InvalidInput("basis needs at least one coordinate".into()));
        }
        let mut exponents = vec![vec![0; dim]];
        for total in 1..=spec.degree {
            if spec.interactions {
                let mut current = vec![0; dim];
                push_compositions(total, 0, &mut current, &mut exponents);
            } else {
                for j in 0..dim {
                    let mut e = vec![0; dim];
                    e[j] = total;
                    exponents.push(e);
                }
            }
        }
        Ok(Self { spec, dim, exponents })
    }

    /// The constant function alone.
    #[cfg(test)]
    pub(crate) fn constant(dim: usize) -> Self {
        Self { spec: BasisSpec { degree: 0, interactions: false, lambda: 0.0 }, dim, exponents: vec![vec![0; dim]] }
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis functions J.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    fn check_point(&self, point: &[f64]) {
        assert_eq!(point.len(), self.dim, "point dimension does not match the basis");
    }

    /// Monomials at `point`; the first entry is the constant 1.
    pub fn row(&self, point: &[f64]) -> Vec<f64> {
        self.check_point(point);
        self.exponents
            .iter()
            .map(|e| e.iter().zip(point).map(|(&k, &v)| v.powi(k as i32)).product())
            .collect()
    }

    /// Partial derivatives of the monomials in the first coordinate.
    pub fn row_d0(&self, point: &[f64]) -> Vec<f64> {
        self.check_point(point);
        self.exponents
            .iter()
            .map(|e| {
                if e[0] == 0 {
                    return 0.0;
                }
                let lead = e[0] as f64 * point[0].powi(e[0] as i32 - 1);
                lead * e[1..]
                    .iter()
                    .zip(&point[1..])
                    .map(|(&k, &v)| v.powi(k as i32))
                    .product::<f64>()
            })
            .collect()
    }
}

// Exponent vectors with the given total, first coordinate varying slowest
// from high to low so that pure powers of the first coordinate come first.
fn push_compositions(total: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let dim = current.len();
    if pos == dim - 1 {
        current[pos] = total;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for k in (0..=total).rev() {
        current[pos] = k;
        push_compositions(total - k, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Design row in `(p, x)`.
pub fn design_row(basis: &PolyBasis, p: f64, x: &[f64]) -> Vec<f64> {
    let mut point = Vec::with_capacity(1 + x.len());
    point.push(p);
    point.extend_from_slice(x);
    basis.row(&point)
}

/// Penalized least-squares system (n^-1 Phi'Phi + lambda I~) on a standardized
/// design, factorized once and reused for several right-hand sides.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    n: usize,
    lambda: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
    std_rows: DMatrix<f64>,
    inverse: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl RidgeSystem {
    /// `rows` is n x J with a constant first column.
    pub fn new(rows: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let (n, j) = rows.shape();
        if j == 0 || n == 0 {
            return Err(UqeError::InvalidInput("empty design".into()));
        }
        if j >= n {
            return Err(UqeError::InvalidInput(format!(
                "basis dimension {j} must be below the sample size {n}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(UqeError::InvalidInput(format!("ridge penalty {lambda} must be nonnegative")));
        }
        let nf = n as f64;
        let mut means = vec![0.0; j];
        let mut scales = vec![1.0; j];
        let mut std_rows = rows.clone();
        for c in 1..j {
            let col = rows.column(c);
            let m = col.sum() / nf;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
            let s = if var > 0.0 { var.sqrt() } else { 1.0 };
            means[c] = m;
            scales[c] = s;
            for r in 0..n {
                std_rows[(r, c)] = (rows[(r, c)] - m) / s;
            }
        }
        let gram = rows.transpose() * rows / nf;
        let mut penalized = std_rows.transpose() * &std_rows / nf;
        for c in 1..j {
            penalized[(c, c)] += lambda;
        }
        let inverse = spd_inverse(&penalized).map_err(|reason| {
            UqeError::Singular(format!("series design with J = {j} basis functions: {reason}"))
        })?;
        Ok(Self { n, lambda, means, scales, std_rows, inverse, gram })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Raw Gram matrix n^-1 Phi'Phi.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Coefficients on the raw monomial scale regressing `target` on the rows.
    pub fn solve(&self, target: &[f64]) -> Result<Vec<f64>> {
        if target.len() != self.n {
            return Err(UqeError::InvalidInput(format!(
                "target length {} does not match design rows {}",
                target.len(),
                self.n
            )));
        }
        let t = DVector::from_column_slice(target);
        let moment = self.std_rows.transpose() * t / self.n as f64;
        Ok(self.solve_standardized_moment(&moment))
    }

    /// Solves against a moment vector expressed on the raw basis scale,
    /// e.g. n^-1 sum of basis derivatives.
    pub fn solve_raw_moment(&self, raw: &[f64]) -> Vec<f64> {
        let moment = DVector::from_iterator(
            raw.len(),
            raw.iter().enumerate().map(|(c, v)| if c == 0 { *v } else { v / self.scales[c] }),
        );
        self.solve_standardized_moment(&moment)
    }

    fn solve_standardized_moment(&self, moment: &DVector<f64>) -> Vec<f64> {
        let b_std = &self.inverse * moment;
        let j = self.dim();
        let mut b = vec![0.0; j];
        let mut intercept = b_std[0];
        for c in 1..j {
            b[c] = b_std[c] / self.scales[c];
            intercept -= self.means[c] * b[c];
        }
        b[0] = intercept;
        b
    }
}

/// Inverse of a symmetric positive-definite matrix. Uses a Cholesky factor,
/// falling back to the eigen-decomposition pseudoinverse when the factor
/// breaks down on a matrix that passes the conditioning check.
fn spd_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) || min < CONDITION_FLOOR * max {
        return Err(format!(
            "smallest eigenvalue {min:.3e} below {CONDITION_FLOOR:.0e} x largest {max:.3e}"
        ));
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.inverse());
    }
    let mut inv_vals = eig.eigenvalues.clone();
    for v in inv_vals.iter_mut() {
        *v = 1.0 / *v;
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Ridge coefficients b = (n^-1 Phi'Phi + lambda I~)^-1 n^-1 Phi't, constant exempt.
pub fn ridge_fit(rows: &DMatrix<f64>, target: &[f64], lambda: f64) -> Result<Vec<f64>> {
    RidgeSystem::new(rows, lambda)?.solve(target)
}

/// A fitted series regression in `(p, x)`.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub basis: PolyBasis,
    pub coef: Vec<f64>,
    /// Raw Gram matrix n^-1 sum phi phi'.
    pub gram: DMatrix<f64>,
}

impl SeriesFit {
    pub fn predict(&self, p: f64, x: &[f64]) -> f64 {
        dot(&design_row(&self.basis, p, x), &self.coef)
    }

    /// d m/dp at `(p, x)`.
    pub fn dpredict_dp(&self, p: f64, x: &[f64]) -> f64 {
        let mut point = Vec::with_capacity(1 + x.len());
        point.push(p);
        point.extend_from_slice(x);
        dot(&self.basis.row_d0(&point), &self.coef)
    }

    /// z1-derivative through the chain rule, (d phi/dp)'b * dP/dz1.
    pub fn dpredict_dz1(&self, p: f64, x: &[f64], dp_dz1: f64) -> f64 {
        self.dpredict_dp(p, x) * dp_dz1
    }
}

pub fn predict(fit: &SeriesFit, p: f64, x: &[f64]) -> f64 {
    fit.predict(p, x)
}

pub fn dpredict_dz1(fit: &SeriesFit, p: f64, x: &[f64], dp_dz1: f64) -> f64 {
    fit.dpredict_dz1(p, x, dp_dz1)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Series design over the generated regressors (P_i, X_i) of a dataset.
#[derive(Debug, Clone)]
pub struct SeriesDesign {
    pub basis: PolyBasis,
    pub system: RidgeSystem,
    pub rows: DMatrix<f64>,
    /// d phi / d z1 at each observation (chain rule through P).
    pub d_rows: DMatrix<f64>,
    pub p: Vec<f64>,
    pub dp_dz1: Vec<f64>,
    x: DMatrix<f64>,
}

impl SeriesDesign {
    pub fn new(data: &Dataset, p: Vec<f64>, dp_dz1: Vec<f64>, spec: BasisSpec) -> Result<Self> {
        let n = data.n();
        let basis = PolyBasis::new(spec, 1 + data.dx())?;
        let j = basis.len();
        if j * 10 > n {
            return Err(UqeError::InvalidInput(format!(
                "basis dimension J = {j} exceeds n/10 = {}",
                n / 10
            )));
        }
        let mut rows = DMatrix::zeros(n, j);
        let mut d_rows = DMatrix::zeros(n, j);
        let mut point = vec![0.0; 1 + data.dx()];
        for i in 0..n {
            point[0] = p[i];
            for k in 0..data.dx() {
                point[k + 1] = data.x()[(i, k)];
            }
            let r = basis.row(&point);
            let dr = basis.row_d0(&point);
            for c in 0..j {
                rows[(i, c)] = r[c];
                d_rows[(i, c)] = dr[c] * dp_dz1[i];
            }
        }
        let system = RidgeSystem::new(&rows, spec.lambda)?;
        Ok(Self { basis, system, rows, d_rows, p, dp_dz1, x: data.x().clone() })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn fit(&self, target: &[f64]) -> Result<SeriesFit> {
        let coef = self.system.solve(target)?;
        Ok(SeriesFit { basis: self.basis.clone(), coef, gram: self.system.gram().clone() })
    }

    pub fn fitted(&self, fit: &SeriesFit) -> Vec<f64> {
        (&self.rows * DVector::from_column_slice(&fit.coef)).iter().copied().collect()
    }

    /// Per-observation z1-derivatives of the fitted regression.
    pub fn fitted_dz1(&self, fit: &SeriesFit) -> Vec<f64> {
        (&self.d_rows * DVector::from_column_slice(&fit.coef)).iter().copied().collect()
    }

    /// Sample average of the z1-derivative, n^-1 sum (d phi/dz1)'b.
    pub fn average_derivative(&self, fit: &SeriesFit) -> f64 {
        self.fitted_dz1(fit).iter().sum::<f64>() / self.n() as f64
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Series estimate of E[d log f_W / d z1 | P, X] at each observation:
    /// -phi_i' (sum phi phi')^-1 sum d phi / d z1.
    pub fn log_density_projection(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let moment: Vec<f64> = (0..self.d_rows.ncols())
            .map(|c| self.d_rows.column(c).sum() / n)
            .collect();
        let b = self.system.solve_raw_moment(&moment);
        (&self.rows * DVector::from_vec(b)).iter().map(|v| -v).collect()
    }
}

/// Series projection of the z1 log-density derivative on the basis in
/// (P(W), X) for a fitted propensity model.
pub fn log_density_deriv_projection(data: &Dataset, ps: &PsModel, basis: BasisSpec) -> Result<Vec<f64>> {
    let (p, dp) = ps.evaluate(data);
    Ok(SeriesDesign::new(data, p, dp, basis)?.log_density_projection())
}
