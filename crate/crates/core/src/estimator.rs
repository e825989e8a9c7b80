//! Split-sample least squares, covariance estimators and the Wald process.
//!
//! Two routes compute the Wald statistic:
//!
//! * [`split_ols`] + [`wald_at`] work on the literal break-augmented design
//!   `x_t(ψ) = (x_t', x_t'·1{t > [Tψ]})'` with a Householder QR. They handle
//!   partial breaks and are the reference route.
//! * [`wald_curve`] evaluates the whole process. For a full break the augmented
//!   regression is a reparametrization of two separate segment regressions, and
//!   the Wald statistic is invariant to it, so the curve engine keeps running
//!   Givens factors of the two segments and never refits from scratch. The
//!   regressor-only part of that work is shared by every response evaluated
//!   on the same panel, which is what makes the bootstrap affordable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{build_partial_break_design, BreakDesign, BreakGrid, RegressionPanel};
use crate::error::{Error, Result};
use crate::linalg;

/// Condition number above which a split design is declared singular.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Estimator of E[ν_t² x_t(ψ) x_t(ψ)'].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovKind {
    /// T⁻¹ Σ x_t(ψ) x_t(ψ)' û_t(ψ)².
    #[default]
    EickerWhite,
    /// σ̂²(ψ) P̂(ψ).
    Homoskedastic,
    /// Eicker-White moments of x_t pooled over the sample, arranged in the
    /// block pattern [[Ξ, (1-ψ)Ξ], [(1-ψ)Ξ, (1-ψ)Ξ]].
    StructuredEickerWhite,
}

/// What to do when a grid point cannot be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SingularPolicy {
    #[default]
    Abort,
    /// Drop the point from the curve and record its split index.
    SkipAndFlag,
}

/// OLS fit of the break-augmented regression at one break fraction.
#[derive(Clone, Debug)]
pub struct SplitFit {
    pub kappa_hat: DVector<f64>,
    pub residuals: DVector<f64>,
    pub sigma2_hat: f64,
    pub phat: DMatrix<f64>,
    pub xihat: DMatrix<f64>,
    pub cov_kind: CovKind,
    pub psi: f64,
    pub split: usize,
    pub nobs: usize,
    pub break_block: std::ops::Range<usize>,
    pub condition: f64,
    r_factor: DMatrix<f64>,
}

impl SplitFit {
    /// Coefficients on the break block (κ̂₂).
    pub fn kappa2(&self) -> DVector<f64> {
        self.kappa_hat
            .rows(self.break_block.start, self.break_block.len())
            .into_owned()
    }

    /// `P̂(ψ)^{-1}` from the QR factor.
    pub fn phat_inverse(&self) -> DMatrix<f64> {
        let n = self.r_factor.nrows();
        let mut r = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                r.push(self.r_factor[(i, j)]);
            }
        }
        let inv = linalg::gram_inverse_from_upper(&r, n);
        DMatrix::from_row_slice(n, n, &inv) * self.nobs as f64
    }
}

/// Least squares on the augmented design via Householder QR.
pub fn split_ols(design: &BreakDesign<'_>, cov_kind: CovKind) -> Result<SplitFit> {
    let xa = &design.xaug;
    let (t, k) = xa.shape();
    let y = design.base.y();
    let qr = xa.clone().qr();
    let r = qr.r();
    let mut rs = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            rs.push(r[(i, j)]);
        }
    }
    let condition = linalg::condition_upper(&rs, k);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularDesign {
            split: design.split,
            condition,
        });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let kappa_hat = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::SingularDesign {
            split: design.split,
            condition,
        })?;
    let residuals = y - xa * &kappa_hat;
    let sigma2_hat = residuals.norm_squared() / t as f64;
    let phat = (xa.transpose() * xa) / t as f64;
    let mut fit = SplitFit {
        kappa_hat,
        residuals,
        sigma2_hat,
        phat,
        xihat: DMatrix::zeros(k, k),
        cov_kind,
        psi: design.psi,
        split: design.split,
        nobs: t,
        break_block: design.break_block(),
        condition,
        r_factor: r,
    };
    fit.xihat = match cov_kind {
        CovKind::EickerWhite => covariance_eicker_white(design, &fit),
        CovKind::Homoskedastic => covariance_homoskedastic(design, &fit),
        CovKind::StructuredEickerWhite => covariance_structured(design, &fit),
    };
    Ok(fit)
}

/// T⁻¹ Σ x_t(ψ) x_t(ψ)' û_t(ψ)².
pub fn covariance_eicker_white(design: &BreakDesign<'_>, fit: &SplitFit) -> DMatrix<f64> {
    let xa = &design.xaug;
    let t = xa.nrows();
    let mut scaled = xa.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= fit.residuals[i].abs();
    }
    let m = scaled.transpose() * &scaled / t as f64;
    symmetrize(m)
}

/// σ̂²(ψ) P̂(ψ).
pub fn covariance_homoskedastic(_design: &BreakDesign<'_>, fit: &SplitFit) -> DMatrix<f64> {
    &fit.phat * fit.sigma2_hat
}

/// Pooled Eicker-White moments of the panel regressors, laid out in the block
/// pattern implied by a stable second-moment structure.
pub fn covariance_structured(design: &BreakDesign<'_>, fit: &SplitFit) -> DMatrix<f64> {
    let x = design.base.x();
    let t = x.nrows();
    let p1 = design.break_cols.len();
    let width = design.xaug.ncols();
    // Panel column feeding each augmented column, and whether it is a break term.
    let source: Vec<(usize, bool)> = (0..width)
        .map(|a| {
            if a < p1 {
                (design.break_cols[a], false)
            } else if a < 2 * p1 {
                (design.break_cols[a - p1], true)
            } else {
                (design.stable_cols[a - 2 * p1], false)
            }
        })
        .collect();
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= fit.residuals[i].abs();
    }
    let pooled = scaled.transpose() * &scaled / t as f64;
    let post = 1.0 - design.split as f64 / t as f64;
    DMatrix::from_fn(width, width, |a, b| {
        let (ca, ba) = source[a];
        let (cb, bb) = source[b];
        let w = if ba || bb { post } else { 1.0 };
        pooled[(ca, cb)] * w
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// W_T(ψ) = T κ̂₂' (S P̂⁻¹ Ξ̂ P̂⁻¹ S')⁻¹ κ̂₂.
///
/// The middle matrix is assembled from the break-block rows of P̂⁻¹ only.
pub fn wald_at(fit: &SplitFit) -> Result<f64> {
    let pinv = fit.phat_inverse();
    let b = fit.break_block.clone();
    let rows = pinv.rows(b.start, b.len()).into_owned();
    let mid = &rows * &fit.xihat * rows.transpose();
    let mid = symmetrize(mid);
    let n = b.len();
    let mut a: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a.push(mid[(i, j)]);
        }
    }
    if !linalg::cholesky_in_place(&mut a, n) {
        return Err(Error::SingularMidMatrix { split: fit.split });
    }
    let k2 = fit.kappa2();
    let q = linalg::chol_quadratic_form(&a, n, k2.as_slice());
    Ok(fit.nobs as f64 * q)
}

/// Residuals of the regression of y on the panel regressors with no break.
pub fn restricted_residuals(panel: &RegressionPanel) -> Result<Vec<f64>> {
    let x = panel.x();
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    let rs: Vec<f64> = (0..p * p).map(|i| r[(i / p, i % p)]).collect();
    let condition = linalg::condition_upper(&rs, p);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularDesign {
            split: panel.nobs(),
            condition,
        });
    }
    let mut qty = panel.y().clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or(Error::SingularDesign {
            split: panel.nobs(),
            condition,
        })?;
    Ok((panel.y() - x * beta).iter().cloned().collect())
}

/// The Wald process on a grid together with its centered and rescaled version
/// Z_T(ψ) = (W_T(ψ) - p)/√(2p).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaldCurve {
    pub grid: BreakGrid,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    /// σ̂²(ψ) = T⁻¹ Σ û_t(ψ)².
    pub sigma2: Vec<f64>,
    /// Number of restrictions.
    pub p: usize,
    pub nobs: usize,
    pub cov_kind: CovKind,
    pub psi_hat: f64,
    /// Split indices dropped under [`SingularPolicy::SkipAndFlag`].
    pub skipped: Vec<usize>,
}

/// `(w - p)/√(2p)`.
pub fn center_scale(w: f64, p: usize) -> f64 {
    (w - p as f64) / (2.0 * p as f64).sqrt()
}

impl WaldCurve {
    /// Assembles a curve from precomputed Wald values.
    pub fn from_values(
        grid: BreakGrid,
        w: Vec<f64>,
        sigma2: Vec<f64>,
        p: usize,
        cov_kind: CovKind,
    ) -> Result<Self> {
        if w.len() != grid.len() || sigma2.len() != grid.len() {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: grid.len(),
            });
        }
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let z = w.iter().map(|&v| center_scale(v, p)).collect();
        let psi_hat = grid.fractions[argmin_first(&sigma2)];
        Ok(WaldCurve {
            nobs: grid.nobs,
            grid,
            w,
            z,
            sigma2,
            p,
            cov_kind,
            psi_hat,
            skipped: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Grid position of ψ̂.
    pub fn psi_hat_index(&self) -> usize {
        argmin_first(&self.sigma2)
    }
}

/// Index of the smallest value; ties go to the earliest index.
pub(crate) fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// ψ̂ = argmin_ψ σ̂²(ψ), smallest break fraction among ties.
pub fn estimate_breakpoint(curve: &WaldCurve) -> f64 {
    curve.grid.fractions[argmin_first(&curve.sigma2)]
}

/// Options for [`wald_curve_with`].
#[derive(Clone, Debug, Default)]
pub struct CurveOptions {
    pub cov_kind: CovKind,
    pub on_singular: SingularPolicy,
    /// Columns allowed to break; `None` means all of them.
    pub break_cols: Option<Vec<usize>>,
}

/// Wald curve with the default options for `cov_kind` (full break, abort on
/// singular points).
pub fn wald_curve(
    panel: &RegressionPanel,
    grid: &BreakGrid,
    cov_kind: CovKind,
) -> Result<WaldCurve> {
    wald_curve_with(
        panel,
        grid,
        &CurveOptions {
            cov_kind,
            ..Default::default()
        },
    )
}

pub fn wald_curve_with(
    panel: &RegressionPanel,
    grid: &BreakGrid,
    opts: &CurveOptions,
) -> Result<WaldCurve> {
    let route = CurveRoute::new(panel, grid, opts.break_cols.as_deref())?;
    let values = route.evaluate(panel.y().as_slice(), opts.cov_kind);
    let p = route.restrictions();
    finish_curve(grid, values, p, opts.cov_kind, opts.on_singular)
}

pub(crate) fn finish_curve(
    grid: &BreakGrid,
    values: PointValues,
    p: usize,
    cov_kind: CovKind,
    policy: SingularPolicy,
) -> Result<WaldCurve> {
    let PointValues {
        w,
        sigma2,
        mut failures,
    } = values;
    if failures.is_empty() {
        return WaldCurve::from_values(grid.clone(), w, sigma2, p, cov_kind);
    }
    match policy {
        SingularPolicy::Abort => Err(failures.swap_remove(0).1),
        SingularPolicy::SkipAndFlag => {
            let bad: Vec<usize> = failures.iter().map(|(g, _)| *g).collect();
            let keep: Vec<usize> = (0..grid.len()).filter(|g| !bad.contains(g)).collect();
            if keep.is_empty() {
                return Err(failures.swap_remove(0).1);
            }
            let sub = grid.subset(&keep);
            let w = keep.iter().map(|&g| w[g]).collect();
            let s = keep.iter().map(|&g| sigma2[g]).collect();
            let mut curve = WaldCurve::from_values(sub, w, s, p, cov_kind)?;
            curve.skipped = bad.iter().map(|&g| grid.split_indices[g]).collect();
            Ok(curve)
        }
    }
}

/// Per-point output of a curve evaluation. Failed points hold NaN.
pub(crate) struct PointValues {
    pub w: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub failures: Vec<(usize, Error)>,
}

/// Fitted null model at one break fraction: the part of the fit that excludes
/// the break terms, and the residuals of the full (break-augmented) fit.
#[derive(Clone, Debug)]
pub struct NullFit {
    pub psi: f64,
    pub split: usize,
    /// κ̂₁: coefficients of the non-break columns.
    pub kappa1: Vec<f64>,
    /// x_t' κ̂₁ (plus stable terms for a partial break).
    pub fitted: Vec<f64>,
    /// û_t(ψ) from the break-augmented regression.
    pub residuals: Vec<f64>,
}

/// Either the segment engine (full break) or the literal per-point route.
pub(crate) enum CurveRoute<'a> {
    Fast(CurveEngine),
    Literal {
        panel: &'a RegressionPanel,
        grid: BreakGrid,
        break_cols: Vec<usize>,
    },
}

impl<'a> CurveRoute<'a> {
    pub fn new(
        panel: &'a RegressionPanel,
        grid: &BreakGrid,
        break_cols: Option<&[usize]>,
    ) -> Result<Self> {
        if grid.nobs != panel.nobs() {
            return Err(Error::LengthMismatch {
                left: grid.nobs,
                right: panel.nobs(),
            });
        }
        grid.check_margin(panel.ncols())?;
        match break_cols {
            Some(cols)
                if cols.len() != panel.ncols() || cols.iter().enumerate().any(|(i, &c)| i != c) =>
            {
                if cols.is_empty() {
                    return Err(Error::InvalidInput("break column set is empty".into()));
                }
                Ok(CurveRoute::Literal {
                    panel,
                    grid: grid.clone(),
                    break_cols: cols.to_vec(),
                })
            }
            _ => Ok(CurveRoute::Fast(CurveEngine::new(panel, grid)?)),
        }
    }

    pub fn restrictions(&self) -> usize {
        match self {
            CurveRoute::Fast(e) => e.p,
            CurveRoute::Literal { break_cols, .. } => break_cols.len(),
        }
    }

    pub fn evaluate(&self, y: &[f64], cov: CovKind) -> PointValues {
        match self {
            CurveRoute::Fast(e) => e.evaluate(y, cov),
            CurveRoute::Literal {
                panel,
                grid,
                break_cols,
            } => {
                let swapped;
                let panel: &RegressionPanel = if y == panel.y().as_slice() {
                    panel
                } else {
                    swapped = panel
                        .with_response(y.to_vec())
                        .expect("same shape as the source panel");
                    &swapped
                };
                let mut out = PointValues {
                    w: Vec::new(),
                    sigma2: Vec::new(),
                    failures: Vec::new(),
                };
                for (g, &psi) in grid.fractions.iter().enumerate() {
                    let r = build_partial_break_design(panel, break_cols, psi)
                        .and_then(|d| split_ols(&d, cov))
                        .and_then(|fit| wald_at(&fit).map(|w| (w, fit.sigma2_hat)));
                    match r {
                        Ok((w, s)) => {
                            out.w.push(w);
                            out.sigma2.push(s);
                        }
                        Err(e) => {
                            out.w.push(f64::NAN);
                            out.sigma2.push(f64::NAN);
                            out.failures.push((g, e));
                        }
                    }
                }
                out
            }
        }
    }

    /// Null-model pieces at grid position `g`.
    pub fn null_fit(&self, y: &[f64], g: usize) -> Result<NullFit> {
        match self {
            CurveRoute::Fast(e) => e.null_fit(y, g),
            CurveRoute::Literal {
                panel,
                grid,
                break_cols,
            } => {
                let panel = panel.with_response(y.to_vec())?;
                let d = build_partial_break_design(&panel, break_cols, grid.fractions[g])?;
                let fit = split_ols(&d, CovKind::EickerWhite)?;
                let cols = d.null_columns();
                let kappa1: Vec<f64> = cols.iter().map(|&c| fit.kappa_hat[c]).collect();
                let fitted = (0..panel.nobs())
                    .map(|i| {
                        cols.iter()
                            .zip(&kappa1)
                            .map(|(&c, b)| d.xaug[(i, c)] * b)
                            .sum()
                    })
                    .collect();
                Ok(NullFit {
                    psi: d.psi,
                    split: d.split,
                    kappa1,
                    fitted,
                    residuals: fit.residuals.iter().cloned().collect(),
                })
            }
        }
    }

    pub fn grid(&self) -> &BreakGrid {
        match self {
            CurveRoute::Fast(e) => &e.grid,
            CurveRoute::Literal { grid, .. } => grid,
        }
    }
}

/// Regressor-side precomputation for the full-break curve: inverse Gram
/// matrices of the pre- and post-break segments at every grid split.
pub(crate) struct CurveEngine {
    t: usize,
    p: usize,
    x: Vec<f64>,
    grid: BreakGrid,
    minv_pre: Vec<Vec<f64>>,
    minv_post: Vec<Vec<f64>>,
    singular: Vec<Option<f64>>,
}

impl CurveEngine {
    pub fn new(panel: &RegressionPanel, grid: &BreakGrid) -> Result<Self> {
        let t = panel.nobs();
        let p = panel.ncols();
        let x = panel.x_row_major();
        let n = grid.len();
        let mut minv_pre = vec![Vec::new(); n];
        let mut minv_post = vec![Vec::new(); n];
        let mut cond = vec![0.0f64; n];

        let mut r = vec![0.0; p * p];
        let mut row = vec![0.0; p];
        let mut next = 0;
        for (g, &k) in grid.split_indices.iter().enumerate() {
            while next < k {
                row.copy_from_slice(&x[next * p..(next + 1) * p]);
                linalg::givens_add_row(&mut r, p, &mut row);
                next += 1;
            }
            cond[g] = linalg::condition_upper(&r, p);
            if cond[g] <= CONDITION_LIMIT {
                minv_pre[g] = linalg::gram_inverse_from_upper(&r, p);
            }
        }
        let mut r = vec![0.0; p * p];
        let mut next = t;
        for (g, &k) in grid.split_indices.iter().enumerate().rev() {
            while next > k {
                next -= 1;
                row.copy_from_slice(&x[next * p..(next + 1) * p]);
                linalg::givens_add_row(&mut r, p, &mut row);
            }
            let c = linalg::condition_upper(&r, p);
            cond[g] = cond[g].max(c);
            if cond[g] <= CONDITION_LIMIT {
                minv_post[g] = linalg::gram_inverse_from_upper(&r, p);
            }
        }
        let singular = cond
            .iter()
            .map(|&c| if c <= CONDITION_LIMIT { None } else { Some(c) })
            .collect();
        Ok(CurveEngine {
            t,
            p,
            x,
            grid: grid.clone(),
            minv_pre,
            minv_post,
            singular,
        })
    }

    fn prefix_xy(&self, y: &[f64], upto: usize, from: usize, acc: &mut [f64]) {
        let p = self.p;
        for i in from..upto {
            let xi = &self.x[i * p..(i + 1) * p];
            for (a, &v) in acc.iter_mut().zip(xi) {
                *a += v * y[i];
            }
        }
    }

    fn segment_coefficients(
        &self,
        g: usize,
        b_pre: &[f64],
        b_tot: &[f64],
        beta1: &mut [f64],
        beta2: &mut [f64],
    ) {
        let p = self.p;
        let b_post: Vec<f64> = b_tot.iter().zip(b_pre).map(|(a, b)| a - b).collect();
        linalg::matvec(&self.minv_pre[g], p, b_pre, beta1);
        linalg::matvec(&self.minv_post[g], p, &b_post, beta2);
    }

    pub fn evaluate(&self, y: &[f64], cov: CovKind) -> PointValues {
        let (t, p) = (self.t, self.p);
        let n = self.grid.len();
        let mut out = PointValues {
            w: vec![f64::NAN; n],
            sigma2: vec![f64::NAN; n],
            failures: Vec::new(),
        };
        let mut b_tot = vec![0.0; p];
        self.prefix_xy(y, t, 0, &mut b_tot);
        let mut b_pre = vec![0.0; p];
        let mut next = 0;
        let mut beta1 = vec![0.0; p];
        let mut beta2 = vec![0.0; p];
        let mut s1 = vec![0.0; p * p];
        let mut s2 = vec![0.0; p * p];
        let mut f = vec![0.0; p * p];
        let mut tmp = vec![0.0; p * p];
        let need_moments = cov != CovKind::Homoskedastic;

        for (g, &k) in self.grid.split_indices.iter().enumerate() {
            self.prefix_xy(y, k, next, &mut b_pre);
            next = k;
            if let Some(condition) = self.singular[g] {
                out.failures.push((
                    g,
                    Error::SingularDesign {
                        split: k,
                        condition,
                    },
                ));
                continue;
            }
            self.segment_coefficients(g, &b_pre, &b_tot, &mut beta1, &mut beta2);

            let mut ssr = 0.0;
            s1.iter_mut().for_each(|v| *v = 0.0);
            s2.iter_mut().for_each(|v| *v = 0.0);
            for (seg, beta, s) in [(0..k, &beta1, &mut s1), (k..t, &beta2, &mut s2)] {
                for i in seg {
                    let xi = &self.x[i * p..(i + 1) * p];
                    let fitted: f64 = xi.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                    let u = y[i] - fitted;
                    let w = u * u;
                    ssr += w;
                    if need_moments {
                        // Upper triangle only; mirrored below.
                        for a in 0..p {
                            let wa = w * xi[a];
                            let srow = &mut s[a * p + a..(a + 1) * p];
                            for (sv, &xb) in srow.iter_mut().zip(&xi[a..]) {
                                *sv += wa * xb;
                            }
                        }
                    }
                }
            }
            if need_moments {
                for s in [&mut s1, &mut s2] {
                    for a in 0..p {
                        for b in 0..a {
                            s[a * p + b] = s[b * p + a];
                        }
                    }
                }
            }
            let sigma2 = ssr / t as f64;

            f.iter_mut().for_each(|v| *v = 0.0);
            match cov {
                CovKind::EickerWhite => {
                    linalg::add_sandwich(&self.minv_pre[g], &s1, p, &mut tmp, &mut f);
                    linalg::add_sandwich(&self.minv_post[g], &s2, p, &mut tmp, &mut f);
                }
                CovKind::Homoskedastic => {
                    for ((fv, a), b) in f.iter_mut().zip(&self.minv_pre[g]).zip(&self.minv_post[g])
                    {
                        *fv = sigma2 * (a + b);
                    }
                }
                CovKind::StructuredEickerWhite => {
                    // Pooled Ξ̂ = (S1 + S2)/T, weighted by the segment lengths.
                    let pre = k as f64 / t as f64;
                    let post = (t - k) as f64 / t as f64;
                    let pooled: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
                    let s_pre: Vec<f64> = pooled.iter().map(|v| v * pre).collect();
                    let s_post: Vec<f64> = pooled.iter().map(|v| v * post).collect();
                    linalg::add_sandwich(&self.minv_pre[g], &s_pre, p, &mut tmp, &mut f);
                    linalg::add_sandwich(&self.minv_post[g], &s_post, p, &mut tmp, &mut f);
                }
            }
            let d: Vec<f64> = beta2.iter().zip(&beta1).map(|(a, b)| a - b).collect();
            if !linalg::cholesky_in_place(&mut f, p) {
                out.failures
                    .push((g, Error::SingularMidMatrix { split: k }));
                continue;
            }
            out.w[g] = linalg::chol_quadratic_form(&f, p, &d);
            out.sigma2[g] = sigma2;
        }
        out
    }

    pub fn null_fit(&self, y: &[f64], g: usize) -> Result<NullFit> {
        let (t, p) = (self.t, self.p);
        let k = self.grid.split_indices[g];
        if let Some(condition) = self.singular[g] {
            return Err(Error::SingularDesign {
                split: k,
                condition,
            });
        }
        let mut b_tot = vec![0.0; p];
        self.prefix_xy(y, t, 0, &mut b_tot);
        let mut b_pre = vec![0.0; p];
        self.prefix_xy(y, k, 0, &mut b_pre);
        let mut beta1 = vec![0.0; p];
        let mut beta2 = vec![0.0; p];
        self.segment_coefficients(g, &b_pre, &b_tot, &mut beta1, &mut beta2);
        let mut fitted = Vec::with_capacity(t);
        let mut residuals = Vec::with_capacity(t);
        for i in 0..t {
            let xi = &self.x[i * p..(i + 1) * p];
            let f1: f64 = xi.iter().zip(&beta1).map(|(a, b)| a * b).sum();
            let own = if i < k {
                f1
            } else {
                xi.iter().zip(&beta2).map(|(a, b)| a * b).sum()
            };
            fitted.push(f1);
            residuals.push(y[i] - own);
        }
        Ok(NullFit {
            psi: self.grid.fractions[g],
            split: k,
            kappa1: beta1,
            fitted,
            residuals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_break_design, make_grid, GridPolicy};

    fn small_panel() -> RegressionPanel {
        // T = 6, p = 1 (constant regressor).
        let y = vec![1.0, 2.0, 0.0, 4.0, 3.0, 5.0];
        RegressionPanel::from_parts(y, DMatrix::from_element(6, 1, 1.0)).unwrap()
    }

    #[test]
    fn exact_fit_has_zero_residuals() {
        let t = 12;
        let x = DMatrix::from_fn(t, 2, |i, j| {
            if j == 0 {
                1.0
            } else {
                (i as f64).sin() + i as f64 * 0.1
            }
        });
        let panel0 = RegressionPanel::from_parts(vec![0.0; t], x.clone()).unwrap();
        let d0 = build_break_design(&panel0, 0.5).unwrap();
        let coef = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let y = &d0.xaug * &coef;
        let panel = RegressionPanel::from_parts(y.iter().cloned().collect(), x).unwrap();
        let d = build_break_design(&panel, 0.5).unwrap();
        let fit = split_ols(&d, CovKind::EickerWhite).unwrap();
        assert!(fit.residuals.amax() < 1e-12);
        assert!(fit.sigma2_hat < 1e-24);
        assert!((&fit.kappa_hat - &coef).amax() < 1e-10);
        assert!(covariance_eicker_white(&d, &fit).amax() < 1e-20);
        assert!(covariance_homoskedastic(&d, &fit).amax() < 1e-20);
    }

    #[test]
    fn six_observation_normal_equations() {
        // With x ≡ 1 and split k = 3, κ̂₁ is the pre-break mean and κ̂₂ the
        // difference of segment means; the 2×2 normal equations give the same.
        let panel = small_panel();
        let d = build_break_design(&panel, 0.5).unwrap();
        let fit = split_ols(&d, CovKind::Homoskedastic).unwrap();
        // X'X = [[6,3],[3,3]], X'y = [15, 12]; inverse = [[1/3,-1/3],[-1/3,2/3]].
        let k1 = 15.0 / 3.0 - 12.0 / 3.0;
        let k2 = -15.0 / 3.0 + 2.0 * 12.0 / 3.0;
        assert!((fit.kappa_hat[0] - k1).abs() < 1e-12);
        assert!((fit.kappa_hat[1] - k2).abs() < 1e-12);
        // Scalar Wald: W = κ̂₂² / (σ̂² [(X'X)^{-1}]_{22}).
        let resid: Vec<f64> = vec![0.0, 1.0, -1.0, 0.0, -1.0, 1.0];
        let s2: f64 = resid.iter().map(|u| u * u).sum::<f64>() / 6.0;
        let w = k2 * k2 / (s2 * (2.0 / 3.0));
        assert!((wald_at(&fit).unwrap() - w).abs() < 1e-10);
        // Eicker-White version: Var(κ̂₂) = Σ_pre u²/9 + Σ_post u²/9.
        let fit = split_ols(&d, CovKind::EickerWhite).unwrap();
        let v = 2.0 / 9.0 + 2.0 / 9.0;
        assert!((wald_at(&fit).unwrap() - k2 * k2 / v).abs() < 1e-10);
    }

    #[test]
    fn homoskedastic_error_on_degenerate_panel() {
        let x = DMatrix::<f64>::identity(2, 2);
        assert!(RegressionPanel::from_parts(vec![1.0, 2.0], x).is_err());
    }

    #[test]
    fn zero_break_coefficient_gives_zero_wald() {
        // Symmetric design: both halves see the same (x, y) pairs.
        let half = [(1.0, 0.5), (2.0, 1.7), (3.0, 3.1), (4.0, 3.9), (5.0, 5.3)];
        let mut y = Vec::new();
        let mut x = Vec::new();
        for _ in 0..2 {
            for &(a, b) in &half {
                x.push(1.0);
                x.push(a);
                y.push(b);
            }
        }
        let panel = RegressionPanel::from_parts(y, DMatrix::from_row_slice(10, 2, &x)).unwrap();
        let d = build_break_design(&panel, 0.5).unwrap();
        let fit = split_ols(&d, CovKind::EickerWhite).unwrap();
        assert!(fit.kappa2().amax() < 1e-12);
        assert!(wald_at(&fit).unwrap().abs() < 1e-20);
    }

    #[test]
    fn curve_identity_injection() {
        let grid = make_grid(40, 0.2, 0.8, GridPolicy::EveryIndex).unwrap();
        let n = grid.len();
        let p = 3;
        let c = WaldCurve::from_values(
            grid.clone(),
            vec![p as f64; n],
            vec![1.0; n],
            p,
            CovKind::EickerWhite,
        )
        .unwrap();
        assert!(c.z.iter().all(|&z| z == 0.0));
        let w = p as f64 + (2.0 * p as f64).sqrt();
        let c = WaldCurve::from_values(grid, vec![w; n], vec![1.0; n], p, CovKind::EickerWhite)
            .unwrap();
        assert!(c.z.iter().all(|&z| (z - 1.0).abs() < 1e-15));
    }

    #[test]
    fn breakpoint_ties_and_single_point() {
        let grid = make_grid(40, 0.2, 0.8, GridPolicy::EveryIndex).unwrap();
        let n = grid.len();
        let c = WaldCurve::from_values(
            grid.clone(),
            vec![1.0; n],
            vec![2.0; n],
            1,
            CovKind::EickerWhite,
        )
        .unwrap();
        assert_eq!(estimate_breakpoint(&c), grid.fractions[0]);
        let single = BreakGrid::from_fractions(40, &[0.5]).unwrap();
        let c =
            WaldCurve::from_values(single, vec![1.0], vec![3.0], 1, CovKind::EickerWhite).unwrap();
        assert_eq!(estimate_breakpoint(&c), 0.5);
    }

    #[test]
    fn collinear_design_is_singular() {
        let t = 30;
        let x = DMatrix::from_fn(t, 2, |i, _| i as f64);
        let panel = RegressionPanel::from_parts((0..t).map(|i| i as f64).collect(), x).unwrap();
        let d = build_break_design(&panel, 0.5).unwrap();
        assert!(matches!(
            split_ols(&d, CovKind::EickerWhite),
            Err(Error::SingularDesign { .. })
        ));
        let grid = make_grid(t, 0.3, 0.7, GridPolicy::EveryIndex).unwrap();
        assert!(matches!(
            wald_curve(&panel, &grid, CovKind::EickerWhite),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn skip_and_flag_drops_points() {
        // Regressor that is zero on the first 12 rows: splits ≤ 12 leave a
        // singular pre-break block.
        let t = 40;
        let x = DMatrix::from_fn(
            t,
            1,
            |i, _| if i < 12 { 0.0 } else { 1.0 + (i as f64).cos() },
        );
        let y: Vec<f64> = (0..t).map(|i| (i as f64 * 0.7).sin()).collect();
        let panel = RegressionPanel::from_parts(y, x).unwrap();
        let grid = make_grid(t, 0.2, 0.8, GridPolicy::EveryIndex).unwrap();
        let opts = CurveOptions {
            on_singular: SingularPolicy::SkipAndFlag,
            ..Default::default()
        };
        let c = wald_curve_with(&panel, &grid, &opts).unwrap();
        assert_eq!(c.skipped, (8..=12).collect::<Vec<_>>());
        assert_eq!(c.len(), grid.len() - 5);
        assert!(c.w.iter().all(|w| w.is_finite() && *w >= 0.0));
    }

    #[test]
    fn segment_engine_matches_augmented_regression() {
        let t = 37;
        let x = DMatrix::from_fn(t, 3, |i, j| match j {
            0 => 1.0,
            1 => ((i * 7 + 3) % 11) as f64 - 5.0,
            _ => (i as f64 * 0.37).cos() * (1.0 + i as f64 / 10.0),
        });
        let y: Vec<f64> = (0..t)
            .map(|i| ((i * 13 + 5) % 17) as f64 / 4.0 + if i > 20 { 1.5 } else { 0.0 })
            .collect();
        let panel = RegressionPanel::from_parts(y, x).unwrap();
        let grid = make_grid(t, 0.15, 0.85, GridPolicy::EveryIndex).unwrap();
        for cov in [
            CovKind::EickerWhite,
            CovKind::Homoskedastic,
            CovKind::StructuredEickerWhite,
        ] {
            let curve = wald_curve(&panel, &grid, cov).unwrap();
            for (g, &psi) in grid.fractions.iter().enumerate() {
                let d = build_break_design(&panel, psi).unwrap();
                let fit = split_ols(&d, cov).unwrap();
                let w = wald_at(&fit).unwrap();
                assert!(
                    (curve.w[g] - w).abs() <= 1e-8 * w.abs().max(1.0),
                    "{cov:?} {g}: {} vs {w}",
                    curve.w[g]
                );
                assert!((curve.sigma2[g] - fit.sigma2_hat).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn restricted_residuals_are_demeaned_for_constant_design() {
        let u = restricted_residuals(&small_panel()).unwrap();
        let expect = [-1.5, -0.5, -2.5, 1.5, 0.5, 2.5];
        for (a, b) in u.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
