use crate::error::{Error, Result};

/// Dense row-major square matrix helpers for the small dimensions used here.
fn idx(d: usize, r: usize, c: usize) -> usize {
    r * d + c
}

/// Lower Cholesky factor, or a domain error if `a` is not SPD.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::domain(format!("expected {d}x{d} matrix, found {} entries", a.len())));
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[idx(d, i, j)];
            for k in 0..j {
                s -= l[idx(d, i, k)] * l[idx(d, j, k)];
            }
            if i == j {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::domain("covariance is not symmetric positive definite"));
                }
                l[idx(d, i, i)] = s.sqrt();
            } else {
                l[idx(d, i, j)] = s / l[idx(d, j, j)];
            }
        }
    }
    Ok(l)
}

fn is_symmetric(a: &[f64], d: usize) -> bool {
    (0..d).all(|i| (0..i).all(|j| (a[idx(d, i, j)] - a[idx(d, j, i)]).abs() <= 1e-12 * (1.0 + a[idx(d, i, j)].abs())))
}

/// `log det` from a Cholesky factor.
fn chol_logdet(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[idx(d, i, i)].ln()).sum::<f64>()
}

/// Inverse of an SPD matrix.
pub fn spd_inverse(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let l = cholesky(a, d)?;
    let mut inv = vec![0.0; d * d];
    for col in 0..d {
        // forward then back substitution on the unit vector
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[idx(d, i, k)] * y[k];
            }
            y[i] = s / l[idx(d, i, i)];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[idx(d, k, i)] * inv[idx(d, k, col)];
            }
            inv[idx(d, i, col)] = s / l[idx(d, i, i)];
        }
    }
    Ok(inv)
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[idx(d, i, k)];
            for j in 0..d {
                out[idx(d, i, j)] += aik * b[idx(d, k, j)];
            }
        }
    }
    out
}

pub fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|i| (0..d).map(|j| a[idx(d, i, j)] * x[j]).sum()).collect()
}

pub fn trace(a: &[f64], d: usize) -> f64 {
    (0..d).map(|i| a[idx(d, i, i)]).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[idx(d, i, i)] = 1.0;
    }
    m
}

/// A multivariate normal with symmetric positive definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: Vec<f64>,
    /// Row-major `d x d`.
    cov: Vec<f64>,
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        if cov.len() != d * d || !is_symmetric(&cov, d) {
            return Err(Error::domain("covariance must be a symmetric d x d matrix"));
        }
        cholesky(&cov, d)?;
        Ok(GaussianDist { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        GaussianDist {
            mean: vec![0.0; d],
            cov: identity(d),
        }
    }

    /// `N(mean, var I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        let cov = identity(d).into_iter().map(|v| v * var).collect();
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    /// `E |x|^2 = |mu|^2 + tr(Sigma)`.
    pub fn second_moment(&self) -> f64 {
        dot(&self.mean, &self.mean) + trace(&self.cov, self.dim())
    }
}

/// `KL(p || q)` between two Gaussians of the same dimension.
pub fn kl_gaussian(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::domain(format!("dimensions differ: {d} and {}", q.dim())));
    }
    let lp = cholesky(&p.cov, d)?;
    let lq = cholesky(&q.cov, d)?;
    let q_inv = spd_inverse(&q.cov, d)?;
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let quad = dot(&diff, &matvec(&q_inv, &diff));
    let kl = 0.5 * (trace(&matmul(&q_inv, &p.cov, d), d) - d as f64 + quad + chol_logdet(&lq, d) - chol_logdet(&lp, d));
    // Rounding can leave a tiny negative value for p == q.
    Ok(kl.max(0.0))
}
