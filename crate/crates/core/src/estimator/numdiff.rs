//! Central finite differences and curvature-based standard errors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

fn step(h: f64, x: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient with relative step `h`.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {h} must be positive")));
    }
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hi = step(h, x[i]);
            xs[i] = x[i] + hi;
            let up = f(&xs);
            xs[i] = x[i] - hi;
            let dn = f(&xs);
            xs[i] = x[i];
            if !up.is_finite() || !dn.is_finite() {
                return Err(Error::Numeric(format!("objective not finite near coordinate {i}")));
            }
            Ok((up - dn) / (2.0 * hi))
        })
        .collect()
}

/// Hessian by central differences of a gradient function, symmetrized.
pub fn hessian_from_gradient<G: Fn(&[f64]) -> Vec<f64>>(grad: G, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut xs = x.to_vec();
    for i in 0..n {
        let hi = step(h, x[i]);
        xs[i] = x[i] + hi;
        let up = grad(&xs);
        xs[i] = x[i] - hi;
        let dn = grad(&xs);
        xs[i] = x[i];
        for j in 0..n {
            let v = (up[j] - dn[j]) / (2.0 * hi);
            if !v.is_finite() {
                return Err(Error::Numeric(format!("curvature not finite near coordinate {i}")));
            }
            hm[(i, j)] = v;
        }
    }
    Ok((&hm + hm.transpose()) * 0.5)
}

/// Hessian by second-order central differences of the objective alone.
pub fn hessian_from_values<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut xs = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        let hi = step(h, x[i]);
        for j in i..n {
            let hj = step(h, x[j]);
            let v = if i == j {
                xs[i] = x[i] + hi;
                let up = f(&xs);
                xs[i] = x[i] - hi;
                let dn = f(&xs);
                xs[i] = x[i];
                (up - 2.0 * f0 + dn) / (hi * hi)
            } else {
                let mut eval = |si: f64, sj: f64| {
                    xs[i] = x[i] + si * hi;
                    xs[j] = x[j] + sj * hj;
                    let v = f(&xs);
                    xs[i] = x[i];
                    xs[j] = x[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * hi * hj)
            };
            if !v.is_finite() {
                return Err(Error::Numeric(format!("curvature not finite near coordinates ({i}, {j})")));
            }
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok(hm)
}

/// Inverse observed information and per-parameter standard errors.
#[derive(Debug, Clone)]
pub struct Curvature {
    /// `None` when the negative Hessian is not positive definite.
    pub covariance: Option<DMatrix<f64>>,
    /// `None` for parameters touched by a non-positive curvature direction.
    pub standard_errors: Vec<Option<f64>>,
}

/// Standard errors from the Hessian of a log-likelihood at its maximum.
pub fn standard_errors_from_hessian(hessian: &DMatrix<f64>) -> Curvature {
    let info = -hessian.clone();
    if let Some(ch) = info.clone().cholesky() {
        let cov = ch.inverse();
        let se = (0..cov.nrows()).map(|i| Some(cov[(i, i)].sqrt())).collect();
        return Curvature { covariance: Some(cov), standard_errors: se };
    }
    // Parameters loading on flat or wrong-signed directions get no standard error;
    // the rest come from the generalized inverse over the positive eigenspace.
    let eig = SymmetricEigen::new(info);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let n = eig.eigenvalues.len();
    let mut se = Vec::with_capacity(n);
    for i in 0..n {
        let mut var = 0.0;
        let mut bad = false;
        for k in 0..n {
            let v = eig.eigenvectors[(i, k)];
            let lam = eig.eigenvalues[k];
            if lam <= 1e-10 * scale {
                if v.abs() > 1e-6 {
                    bad = true;
                }
            } else {
                var += v * v / lam;
            }
        }
        se.push(if bad { None } else { Some(var.sqrt()) });
    }
    Curvature { covariance: None, standard_errors: se }
}

/// Delta-method standard error of a scalar function of the parameters.
pub fn delta_method<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], covariance: &DMatrix<f64>) -> Result<f64> {
    let g = numerical_gradient(f, x, 1e-6)?;
    let gv = nalgebra::DVector::from_vec(g);
    let var = (gv.transpose() * covariance * &gv)[(0, 0)];
    Ok(var.max(0.0).sqrt())
}
