//! Matérn ν = 3/2 kernel with automatic relevance determination.

use nalgebra::DMatrix;

use super::Hyperparameters;
use crate::error::{check_dim, Result};
use crate::space::InputPoint;

pub(crate) const SQRT3: f64 = 1.732_050_807_568_877_2;

/// `σ_f² (1 + √3 r) exp(−√3 r)` with `r² = Σ ((aᵢ − bᵢ)/ℓᵢ)²`.
pub fn kernel(a: &InputPoint, b: &InputPoint, hyper: &Hyperparameters) -> Result<f64> {
    check_dim(hyper.dim(), a.dim())?;
    check_dim(hyper.dim(), b.dim())?;
    let prep = Prepared::new(hyper);
    Ok(prep.eval(a.coords(), b.coords()))
}

pub fn kernel_matrix(xs: &[InputPoint], zs: &[InputPoint], hyper: &Hyperparameters) -> Result<DMatrix<f64>> {
    for p in xs.iter().chain(zs) {
        check_dim(hyper.dim(), p.dim())?;
    }
    Ok(Prepared::new(hyper).cross(xs, zs))
}

/// Kernel with exponentiated hyperparameters cached.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub inv_ls: Vec<f64>,
    pub signal_var: f64,
}

impl Prepared {
    pub fn new(hyper: &Hyperparameters) -> Self {
        Prepared {
            inv_ls: hyper.log_lengthscales.iter().map(|l| (-l).exp()).collect(),
            signal_var: hyper.signal_var(),
        }
    }

    #[inline]
    pub fn scaled_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), il) in a.iter().zip(b).zip(&self.inv_ls) {
            let t = (x - y) * il;
            s += t * t;
        }
        s.sqrt()
    }

    #[inline]
    pub fn of_dist(&self, r: f64) -> f64 {
        let t = SQRT3 * r;
        self.signal_var * (1.0 + t) * (-t).exp()
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.of_dist(self.scaled_dist(a, b))
    }

    /// Matrix with entry (i, j) = k(xs[i], zs[j]).
    pub fn cross(&self, xs: &[InputPoint], zs: &[InputPoint]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(xs.len(), zs.len());
        for (j, z) in zs.iter().enumerate() {
            let mut col = out.column_mut(j);
            for (i, x) in xs.iter().enumerate() {
                col[i] = self.eval(x.coords(), z.coords());
            }
        }
        out
    }

    /// Symmetric Gram matrix; the upper triangle mirrors the lower exactly.
    pub fn gram(&self, xs: &[InputPoint]) -> DMatrix<f64> {
        let n = xs.len();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            out[(j, j)] = self.signal_var;
            for i in j + 1..n {
                let v = self.eval(xs[i].coords(), xs[j].coords());
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}
