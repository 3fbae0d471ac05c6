//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::features::FeatureSet;
use crate::error::{Error, Result};

/// Added to both covariance diagonals before taking the matrix square root.
pub const COV_EPS: f64 = 1e-6;
/// Eigenvalues above `-NEG_EIG_TOL` are treated as rounding noise and zeroed.
pub const NEG_EIG_TOL: f64 = 1e-6;

/// Mean and `1/(N-1)` covariance.
pub fn mean_and_cov(f: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = (f.len(), f.dim());
    if n < 2 {
        return Err(Error::Data(format!("{} needs at least 2 samples for a covariance, got {n}", f.source)));
    }
    let x = DMatrix::from_row_slice(n, d, f.data());
    let mu = DVector::from_iterator(d, (0..d).map(|j| x.column(j).sum() / n as f64));
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -NEG_EIG_TOL {
            return Err(Error::NonFinite(format!("matrix square root: eigenvalue {v} is negative")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Trace of `(A B)^{1/2}` for symmetric PSD `A`, `B`, via the symmetric
/// product `A^{1/2} B A^{1/2}` which has the same spectrum.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let sa = sym_sqrt(a)?;
    let m = &sa * b * &sa;
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut tr = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -NEG_EIG_TOL {
            return Err(Error::NonFinite(format!("covariance product has negative eigenvalue {v}")));
        }
        tr += v.max(0.0).sqrt();
    }
    Ok(tr)
}

pub fn fid_from_moments(mu_r: &DVector<f64>, cov_r: &DMatrix<f64>, mu_g: &DVector<f64>, cov_g: &DMatrix<f64>) -> Result<f64> {
    let d = mu_r.len();
    if mu_g.len() != d || cov_r.shape() != (d, d) || cov_g.shape() != (d, d) {
        return Err(Error::Shape(format!("moment dimensions differ ({d} vs {})", mu_g.len())));
    }
    let eye = DMatrix::<f64>::identity(d, d) * COV_EPS;
    let (a, b) = (cov_r + &eye, cov_g + &eye);
    let diff = mu_r - mu_g;
    let fid = diff.dot(&diff) + a.trace() + b.trace() - 2.0 * trace_sqrt_product(&a, &b)?;
    if !fid.is_finite() {
        return Err(Error::NonFinite("FID".into()));
    }
    Ok(fid.max(0.0))
}

/// `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2})` with `COV_EPS * I`
/// added to both covariances.
pub fn compute_fid(real: &FeatureSet, gen: &FeatureSet) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::Shape(format!("feature widths differ: {} vs {}", real.dim(), gen.dim())));
    }
    for f in [real, gen] {
        if f.len() <= f.dim() {
            log::warn!("{}: {} samples for {} dimensions; covariance is rank-deficient", f.source, f.len(), f.dim());
        }
    }
    let (mu_r, cov_r) = mean_and_cov(real)?;
    let (mu_g, cov_g) = mean_and_cov(gen)?;
    fid_from_moments(&mu_r, &cov_r, &mu_g, &cov_g)
}
