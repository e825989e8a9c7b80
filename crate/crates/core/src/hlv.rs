//! Kernel-weighted long-run variance of the quadratic-form scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Sharp Bartlett kernel k(u) = (1 - |u|)^exponent on |u| < 1, with bandwidth
/// fraction `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub b: f64,
    pub exponent: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            b: 1.0,
            exponent: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn new(b: f64, exponent: f64) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "bandwidth fraction must lie in (0, 1], got {b}"
            )));
        }
        if !(exponent >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "kernel exponent must be at least 1, got {exponent}"
            )));
        }
        Ok(KernelSpec { b, exponent })
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        (1.0 - a).powf(spec.exponent)
    } else {
        0.0
    }
}

/// Scores ℓ_t for t = 2..T and their demeaned version.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub ell: Vec<f64>,
    pub ell_bar: Vec<f64>,
    /// Set when Ξ̂ had to be ridged before it could be factorized.
    pub ridged: bool,
}

/// T⁻¹ Σ x_t x_t' ν̂_t².
pub fn xi_hat(x: &DMatrix<f64>, nu_hat: &[f64]) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= nu_hat[i].abs();
    }
    scaled.transpose() * &scaled / x.nrows() as f64
}

/// ℓ_t = (Tp)^{-1/2} x_t'Ξ̂⁻¹ν̂_t Σ_{s<t} x_s ν̂_s.
pub fn score_series(
    x: &DMatrix<f64>,
    xi_hat: &DMatrix<f64>,
    nu_hat: &[f64],
) -> Result<ScoreSeries> {
    let (t, p) = x.shape();
    if nu_hat.len() != t {
        return Err(Error::LengthMismatch {
            left: nu_hat.len(),
            right: t,
        });
    }
    if xi_hat.shape() != (p, p) {
        return Err(Error::InvalidInput(format!(
            "Xi is {:?}, expected {p}x{p}",
            xi_hat.shape()
        )));
    }
    if t < 2 {
        return Err(Error::TooFewObservations { have: t, need: 2 });
    }
    let mut chol: Vec<f64> = (0..p * p).map(|i| xi_hat[(i / p, i % p)]).collect();
    let mut ridged = false;
    if nu_hat.iter().all(|&v| v == 0.0) {
        // Degenerate residuals: every score is zero whatever Ξ̂ is.
        return Ok(ScoreSeries {
            ell: vec![0.0; t - 1],
            ell_bar: vec![0.0; t - 1],
            ridged,
        });
    }
    if !linalg::cholesky_in_place(&mut chol, p) {
        let trace: f64 = (0..p).map(|i| xi_hat[(i, i)]).sum();
        let ridge = 1e-10 * trace / p as f64;
        chol = (0..p * p).map(|i| xi_hat[(i / p, i % p)]).collect();
        for i in 0..p {
            chol[i * p + i] += ridge;
        }
        if !(ridge > 0.0) || !linalg::cholesky_in_place(&mut chol, p) {
            return Err(Error::SingularXi);
        }
        ridged = true;
        log::warn!("Xi-hat was not positive definite; added ridge {ridge:e}");
    }
    let scale = 1.0 / ((t * p) as f64).sqrt();
    let mut cum = vec![0.0; p];
    let mut a = vec![0.0; p];
    let mut ell = Vec::with_capacity(t - 1);
    for i in 0..t {
        let row = x.row(i);
        if i > 0 {
            for (j, v) in a.iter_mut().enumerate() {
                *v = row[j] * nu_hat[i];
            }
            linalg::chol_solve(&chol, p, &mut a);
            let dot: f64 = a.iter().zip(&cum).map(|(u, v)| u * v).sum();
            ell.push(scale * dot);
        }
        for (j, c) in cum.iter_mut().enumerate() {
            *c += row[j] * nu_hat[i];
        }
    }
    // Centered by T⁻¹Σℓ_s although only T - 1 scores exist.
    let mean = ell.iter().sum::<f64>() / t as f64;
    let ell_bar = ell.iter().map(|v| v - mean).collect();
    Ok(ScoreSeries {
        ell,
        ell_bar,
        ridged,
    })
}

/// ω̂ = (2/T) Σ_t Σ_s k((t-s)/(Tb)) ℓ̄_s ℓ̄_t.
pub fn hlv_estimate(ell_bar: &[f64], spec: &KernelSpec, t: usize) -> f64 {
    let n = ell_bar.len();
    let tb = t as f64 * spec.b;
    let mut total: f64 = ell_bar.iter().map(|v| v * v).sum();
    for lag in 1..n {
        let w = kernel_eval(spec, lag as f64 / tb);
        if w == 0.0 {
            break;
        }
        let cross: f64 = ell_bar[lag..].iter().zip(ell_bar).map(|(a, b)| a * b).sum();
        total += 2.0 * w * cross;
    }
    2.0 * total / t as f64
}

/// Scores, demeaned scores and ω̂.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HlvEstimate {
    pub omega_hat: f64,
    pub ell: Vec<f64>,
    pub ell_bar: Vec<f64>,
    pub spec: KernelSpec,
    pub ridged: bool,
}

/// Builds Ξ̂ from the residuals and returns the full estimate.
pub fn hlv_from_residuals(
    x: &DMatrix<f64>,
    nu_hat: &[f64],
    spec: &KernelSpec,
) -> Result<HlvEstimate> {
    let xi = xi_hat(x, nu_hat);
    let s = score_series(x, &xi, nu_hat)?;
    let omega_hat = hlv_estimate(&s.ell_bar, spec, x.nrows());
    Ok(HlvEstimate {
        omega_hat,
        ell: s.ell,
        ell_bar: s.ell_bar,
        spec: *spec,
        ridged: s.ridged,
    })
}

/// Double-demeaned kernel 𝒦_h(r, s) on a quadrature grid with equal weights:
/// K(r,s) - ∫K(ϱ,s)dϱ - ∫K(r,ϱ)dϱ + ∬K, with K(r,s) = k((r-s)/b).
pub fn denominator_weights(spec: &KernelSpec, grid: &[f64]) -> DMatrix<f64> {
    let n = grid.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(spec, (grid[i] - grid[j]) / spec.b));
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / n as f64).collect();
    let total = col_means.iter().sum::<f64>() / n as f64;
    // K is symmetric, so row means equal column means.
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - col_means[i] - col_means[j] + total)
}
