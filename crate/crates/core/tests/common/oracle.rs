//! Brute-force oracles on random small problems: dense inverses for the Wald
//! process and the Eicker-White matrix, O(T²) double sums for the scores and ω̂.
#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord
)]

use hdbreak::design::{build_break_design, make_grid, GridPolicy, RegressionPanel};
use hdbreak::estimator::{split_ols, wald_curve, wald_curve_with, CovKind, CurveOptions};
use hdbreak::hlv::{hlv_from_residuals, kernel_eval, KernelSpec};
use hdbreak::rng::StreamKey;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Outcome = Result<(), String>;

macro_rules! check {
    ($cond:expr) => {
        if !$cond {
            return Err(format!("{} failed", stringify!($cond)));
        }
    };
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Instance {
    panel: RegressionPanel,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = StreamKey::new(seed).named("oracle").rng();
    let t = rng.random_range(30..=50);
    let p = rng.random_range(1..=4);
    let intercept = rng.random_bool(0.5);
    let x = DMatrix::<f64>::from_fn(t, p, |_, j| {
        if j == 0 && intercept {
            1.0
        } else {
            StandardNormal.sample(&mut rng)
        }
    });
    let y = DVector::from_fn(t, |i, _| {
        let scale = 0.5 + x[(i, p - 1)].abs();
        let e: f64 = StandardNormal.sample(&mut rng);
        x.row(i).sum() * 0.3 + scale * e
    });
    let panel = RegressionPanel::from_parts(y.iter().cloned().collect(), x.clone()).expect("panel");
    Instance { panel, x, y }
}

/// Augmented regressors [x, x_B·1{t > k}] for break columns `cols`.
fn augmented(x: &DMatrix<f64>, k: usize, cols: &[usize]) -> DMatrix<f64> {
    let (t, p) = x.shape();
    DMatrix::from_fn(t, p + cols.len(), |i, j| {
        if j < p {
            x[(i, j)]
        } else if i >= k {
            x[(i, cols[j - p])]
        } else {
            0.0
        }
    })
}

/// T κ̂₂'(S P⁻¹ Ξ P⁻¹ S')⁻¹ κ̂₂ with explicit inverses.
fn wald_oracle(x: &DMatrix<f64>, y: &DVector<f64>, k: usize, cols: &[usize], cov: CovKind) -> f64 {
    let t = x.nrows() as f64;
    let p = x.ncols();
    let q = cols.len();
    let xa = augmented(x, k, cols);
    let gram = xa.transpose() * &xa;
    let ginv = gram.clone().try_inverse().expect("invertible");
    let kappa = &ginv * xa.transpose() * y;
    let u = y - &xa * &kappa;
    let pinv = ginv * t;
    let mid = match cov {
        CovKind::EickerWhite => {
            let mut xi = DMatrix::zeros(p + q, p + q);
            for i in 0..x.nrows() {
                let r = xa.row(i).transpose();
                xi += &r * r.transpose() * (u[i] * u[i]);
            }
            let xi = xi / t;
            &pinv * xi * &pinv
        }
        CovKind::Homoskedastic => &pinv * (u.norm_squared() / t),
        CovKind::StructuredEickerWhite => unreachable!(),
    };
    let f = mid.view((p, p), (q, q)).into_owned();
    let k2 = kappa.rows(p, q).into_owned();
    t * (k2.transpose() * f.try_inverse().expect("invertible") * k2)[(0, 0)]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

fn grid_for(t: usize) -> hdbreak::design::BreakGrid {
    make_grid(t, 0.25, 0.75, GridPolicy::EveryIndex).expect("grid")
}

pub fn wald_curve_matches_dense_inverse(instances: u64) -> Outcome {
    for seed in 0..instances {
        let inst = instance(seed);
        let grid = grid_for(inst.panel.nobs());
        let all: Vec<usize> = (0..inst.x.ncols()).collect();
        for cov in [CovKind::EickerWhite, CovKind::Homoskedastic] {
            let curve = wald_curve(&inst.panel, &grid, cov).map_err(|e| e.to_string())?;
            for (g, &k) in grid.split_indices.iter().enumerate() {
                let w = wald_oracle(&inst.x, &inst.y, k, &all, cov);
                check!(
                    rel_close(curve.w[g], w, 1e-8),
                    "seed {seed} {cov:?} k {k}: {} vs {w}",
                    curve.w[g]
                );
            }
        }
    }
    Ok(())
}

pub fn partial_break_matches_dense_inverse(instances: u64) -> Outcome {
    for seed in 0..instances {
        let inst = instance(1000 + seed);
        let p = inst.x.ncols();
        if p < 2 {
            continue;
        }
        let cols = vec![p - 1, 0];
        let grid = grid_for(inst.panel.nobs());
        let opts = CurveOptions {
            break_cols: Some(cols.clone()),
            ..CurveOptions::default()
        };
        let curve = wald_curve_with(&inst.panel, &grid, &opts).map_err(|e| e.to_string())?;
        assert_eq!(curve.p, 2);
        for (g, &k) in grid.split_indices.iter().enumerate() {
            let w = wald_oracle(&inst.x, &inst.y, k, &cols, CovKind::EickerWhite);
            check!(
                rel_close(curve.w[g], w, 1e-8),
                "seed {seed} k {k}: {} vs {w}",
                curve.w[g]
            );
        }
    }
    Ok(())
}

pub fn eicker_white_matrix_matches_loop(instances: u64) -> Outcome {
    for seed in 0..instances {
        let inst = instance(2000 + seed);
        let t = inst.panel.nobs();
        let psi = 0.5;
        let design = build_break_design(&inst.panel, psi).map_err(|e| e.to_string())?;
        let fit = split_ols(&design, CovKind::EickerWhite).map_err(|e| e.to_string())?;
        let n = fit.xihat.nrows();
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for i in 0..t {
                    s += design.xaug[(i, a)]
                        * design.xaug[(i, b)]
                        * fit.residuals[i]
                        * fit.residuals[i];
                }
                s /= t as f64;
                check!(
                    rel_close(fit.xihat[(a, b)], s, 1e-8) || (fit.xihat[(a, b)] - s).abs() < 1e-12
                );
                let mut g = 0.0;
                for i in 0..t {
                    g += design.xaug[(i, a)] * design.xaug[(i, b)];
                }
                check!(
                    rel_close(fit.phat[(a, b)], g / t as f64, 1e-10)
                        || (fit.phat[(a, b)] - g / t as f64).abs() < 1e-12
                );
            }
        }
    }
    Ok(())
}

/// ℓ_t by the double sum over s < t with a dense Ξ̂⁻¹.
fn scores_oracle(x: &DMatrix<f64>, nu: &[f64]) -> Vec<f64> {
    let (t, p) = x.shape();
    let mut xi = DMatrix::zeros(p, p);
    for i in 0..t {
        let r = x.row(i).transpose();
        xi += &r * r.transpose() * (nu[i] * nu[i]);
    }
    let xi_inv = (xi / t as f64).try_inverse().expect("invertible");
    let scale = 1.0 / ((t * p) as f64).sqrt();
    (1..t)
        .map(|i| {
            let a = &xi_inv * x.row(i).transpose() * nu[i];
            let mut s = 0.0;
            for j in 0..i {
                s += (x.row(j) * &a)[(0, 0)] * nu[j];
            }
            scale * s
        })
        .collect()
}

fn omega_oracle(ell: &[f64], spec: &KernelSpec, t: usize) -> f64 {
    let mean = ell.iter().sum::<f64>() / t as f64;
    let bar: Vec<f64> = ell.iter().map(|v| v - mean).collect();
    let mut s = 0.0;
    for (a, u) in bar.iter().enumerate() {
        for (b, v) in bar.iter().enumerate() {
            s += kernel_eval(spec, (a as f64 - b as f64) / (t as f64 * spec.b)) * u * v;
        }
    }
    2.0 * s / t as f64
}

pub fn scores_and_omega_match_double_sums(instances: u64) -> Outcome {
    for seed in 0..instances {
        let inst = instance(3000 + seed);
        let mut rng = StreamKey::new(seed).named("nu").rng();
        let nu: Vec<f64> = (0..inst.panel.nobs())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let b = [1.0, 0.5, 0.2][(seed % 3) as usize];
        let spec = KernelSpec::new(b, 1.0).map_err(|e| e.to_string())?;
        let est = hlv_from_residuals(&inst.x, &nu, &spec).map_err(|e| e.to_string())?;
        let ell = scores_oracle(&inst.x, &nu);
        check!(est.ell.len() == ell.len(), "seed {seed}: score length");
        let scale = ell.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in est.ell.iter().zip(&ell) {
            check!((a - b).abs() <= 1e-8 * scale, "seed {seed}: {a} vs {b}");
        }
        let w = omega_oracle(&ell, &spec, inst.panel.nobs());
        check!(
            rel_close(est.omega_hat, w, 1e-8),
            "seed {seed}: {} vs {w}",
            est.omega_hat
        );
    }
    Ok(())
}

pub fn wald_is_invariant_to_reparametrization(instances: u64) -> Outcome {
    for seed in 0..instances {
        let inst = instance(4000 + seed);
        let p = inst.x.ncols();
        let mut rng = StreamKey::new(seed).named("rotate").rng();
        // Well-conditioned A = I + small perturbation.
        let a = DMatrix::from_fn(p, p, |i, j| {
            let e: f64 = rng.random_range(-0.3..0.3);
            if i == j {
                1.0 + e
            } else {
                e
            }
        });
        let xr = &inst.x * a;
        let rotated = RegressionPanel::from_parts(inst.y.iter().cloned().collect(), xr)
            .map_err(|e| e.to_string())?;
        let grid = grid_for(inst.panel.nobs());
        for cov in [
            CovKind::EickerWhite,
            CovKind::Homoskedastic,
            CovKind::StructuredEickerWhite,
        ] {
            let w0 = wald_curve(&inst.panel, &grid, cov).map_err(|e| e.to_string())?;
            let w1 = wald_curve(&rotated, &grid, cov).map_err(|e| e.to_string())?;
            for (u, v) in w0.w.iter().zip(&w1.w) {
                check!(rel_close(*u, *v, 1e-6), "seed {seed} {cov:?}: {u} vs {v}");
            }
        }
    }
    Ok(())
}
