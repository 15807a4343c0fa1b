//! The observed sample (Y, D, Z, X).

use crate::error::{Result, UqeError};
use nalgebra::DMatrix;

/// Observed data. Column 0 of `z` is the intervention coordinate Z1.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<u8>,
    z: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    /// Validates and assembles a dataset. `x` may have zero columns.
    pub fn new(y: Vec<f64>, d: Vec<u8>, z: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.nrows() != n || x.nrows() != n {
            return Err(UqeError::InvalidInput(format!(
                "length mismatch: y={n}, d={}, z={}, x={}",
                d.len(),
                z.nrows(),
                x.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(UqeError::InvalidInput(
                "at least one instrument column (z1) is required".into(),
            ));
        }
        let params = 1 + z.ncols() + x.ncols();
        let min_n = 10.max(params + 1);
        if n < min_n {
            return Err(UqeError::InvalidInput(format!(
                "need at least {min_n} observations, got {n}"
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(UqeError::InvalidInput(format!("y[{i}] is not finite")));
        }
        if let Some(i) = d.iter().position(|&v| v > 1) {
            return Err(UqeError::InvalidInput(format!("d[{i}] = {} is not binary", d[i])));
        }
        if z.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(UqeError::InvalidInput("instrument or covariate value is not finite".into()));
        }
        let treated = d.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(UqeError::InvalidInput(
                "treatment has no variation: need both d = 0 and d = 1".into(),
            ));
        }
        Ok(Self { y, d, z, x })
    }

    /// Builds a dataset with one instrument and optional scalar covariates.
    pub fn from_columns(y: Vec<f64>, d: Vec<u8>, z1: Vec<f64>, x: Option<Vec<f64>>) -> Result<Self> {
        let n = z1.len();
        let z = DMatrix::from_vec(n, 1, z1);
        let x = match x {
            Some(col) => {
                if col.len() != n {
                    return Err(UqeError::InvalidInput("covariate length mismatch".into()));
                }
                DMatrix::from_vec(n, 1, col)
            }
            None => DMatrix::zeros(n, 0),
        };
        Self::new(y, d, z, x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn dz(&self) -> usize {
        self.z.ncols()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn z_row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().copied().collect()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Same design with a different outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(y, self.d.clone(), self.z.clone(), self.x.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(n: usize) -> (Vec<f64>, Vec<u8>, Vec<f64>) {
        let y = (0..n).map(|i| i as f64).collect();
        let d = (0..n).map(|i| (i % 2) as u8).collect();
        let z = (0..n).map(|i| (i as f64).sin()).collect();
        (y, d, z)
    }

    #[test]
    fn validates_shapes_and_values() {
        let (y, d, z) = cols(12);
        assert!(Dataset::from_columns(y.clone(), d.clone(), z.clone(), None).is_ok());
        let mut bad = d.clone();
        bad[3] = 2;
        assert!(Dataset::from_columns(y.clone(), bad, z.clone(), None).is_err());
        assert!(Dataset::from_columns(y.clone(), vec![1; 12], z.clone(), None).is_err());
        let mut yn = y.clone();
        yn[0] = f64::INFINITY;
        assert!(Dataset::from_columns(yn, d.clone(), z.clone(), None).is_err());
        let (y, d, z) = cols(9);
        assert!(Dataset::from_columns(y, d, z, None).is_err());
    }
}
