//! Regression panels, break-augmented designs and the trimmed break grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response vector and regressor matrix of a (possibly lag-trimmed) regression.
#[derive(Clone, Debug)]
pub struct RegressionPanel {
    y: DVector<f64>,
    x: DMatrix<f64>,
    labels: Vec<String>,
    t0: usize,
}

impl RegressionPanel {
    /// Validates and wraps `y` (length T) and `x` (T×p).
    ///
    /// `t0` is the 1-based index, in the original series, of the first row
    /// (`1` when no lags were trimmed).
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, labels: Vec<String>, t0: usize) -> Result<Self> {
        let t = y.len();
        if x.nrows() != t {
            return Err(Error::LengthMismatch {
                left: t,
                right: x.nrows(),
            });
        }
        let p = x.ncols();
        if p == 0 {
            return Err(Error::InvalidInput(
                "panel needs at least one regressor".into(),
            ));
        }
        if labels.len() != p {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: p,
            });
        }
        if t <= 2 * p {
            return Err(Error::TooFewObservations {
                have: t,
                need: 2 * p,
            });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "panel contains non-finite values".into(),
            ));
        }
        Ok(RegressionPanel {
            y: DVector::from_vec(y),
            x,
            labels,
            t0,
        })
    }

    /// Panel with generated labels `x1..xp`.
    pub fn from_parts(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, labels, 1)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    /// Sample size T.
    pub fn nobs(&self) -> usize {
        self.y.len()
    }

    /// Number of regressors p.
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Same regressors, new response (used by the bootstrap).
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(y, self.x.clone(), self.labels.clone(), self.t0)
    }

    /// Row-major copy of the regressors.
    pub(crate) fn x_row_major(&self) -> Vec<f64> {
        let (t, p) = self.x.shape();
        let mut out = Vec::with_capacity(t * p);
        for i in 0..t {
            for j in 0..p {
                out.push(self.x[(i, j)]);
            }
        }
        out
    }
}

/// How grid points are laid out between the trimming bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridPolicy {
    /// One point per admissible split index.
    #[default]
    EveryIndex,
    /// Every `n`-th admissible split index, starting at the lower bound.
    Step(usize),
}

/// Ordered break fractions in Ψ = [c1, c2] with their integer split indices.
///
/// A split index `k` means rows `1..=k` are pre-break and `k+1..=T` post-break.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakGrid {
    pub fractions: Vec<f64>,
    pub split_indices: Vec<usize>,
    pub c1: f64,
    pub c2: f64,
    pub nobs: usize,
}

/// `floor(T * psi)`, robust to representation error in `psi` (0.29 * 100 is
/// 28.999999999999996 in floating point).
pub fn split_index(t: usize, psi: f64) -> usize {
    let v = t as f64 * psi;
    (v + 1e-9 * v.abs().max(1.0)).floor() as usize
}

/// Builds the break grid for a sample of size `t` trimmed to `[c1, c2]`.
pub fn make_grid(t: usize, c1: f64, c2: f64, policy: GridPolicy) -> Result<BreakGrid> {
    if !(c1 > 0.0 && c1 < c2 && c2 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < c1 < c2 < 1, got [{c1}, {c2}]"
        )));
    }
    let lo = split_index(t, c1).max(1);
    let hi = split_index(t, c2).min(t.saturating_sub(1));
    if lo > hi {
        return Err(Error::EmptyGrid);
    }
    let step = match policy {
        GridPolicy::EveryIndex => 1,
        GridPolicy::Step(0) => {
            return Err(Error::InvalidInput("grid step must be positive".into()))
        }
        GridPolicy::Step(s) => s,
    };
    let split_indices: Vec<usize> = (lo..=hi).step_by(step).collect();
    let fractions = split_indices.iter().map(|&k| k as f64 / t as f64).collect();
    Ok(BreakGrid {
        fractions,
        split_indices,
        c1,
        c2,
        nobs: t,
    })
}

impl BreakGrid {
    /// Grid from arbitrary fractions; fractions that map to the same split index
    /// are merged.
    pub fn from_fractions(t: usize, fractions: &[f64]) -> Result<BreakGrid> {
        let mut idx: Vec<usize> = Vec::with_capacity(fractions.len());
        for &f in fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "break fraction {f} outside (0,1)"
                )));
            }
            idx.push(split_index(t, f));
        }
        idx.sort_unstable();
        idx.dedup();
        idx.retain(|&k| k >= 1 && k < t);
        if idx.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let c1 = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
        let c2 = fractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(BreakGrid {
            fractions: idx.iter().map(|&k| k as f64 / t as f64).collect(),
            split_indices: idx,
            c1,
            c2,
            nobs: t,
        })
    }

    pub fn len(&self) -> usize {
        self.split_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split_indices.is_empty()
    }

    /// Checks that every split leaves at least `p + 1` rows on each side.
    pub fn check_margin(&self, p: usize) -> Result<()> {
        for &k in &self.split_indices {
            if k < p + 1 || self.nobs - k < p + 1 {
                return Err(Error::InsufficientSplit {
                    split: k,
                    needed: p + 1,
                    t: self.nobs,
                });
            }
        }
        Ok(())
    }

    /// Keeps only the points whose positions are listed in `keep`.
    pub(crate) fn subset(&self, keep: &[usize]) -> BreakGrid {
        BreakGrid {
            fractions: keep.iter().map(|&i| self.fractions[i]).collect(),
            split_indices: keep.iter().map(|&i| self.split_indices[i]).collect(),
            c1: self.c1,
            c2: self.c2,
            nobs: self.nobs,
        }
    }
}

/// Break-augmented design at a fixed break fraction.
///
/// Columns are laid out as `(x_1, x_1·1{t > k}, x_2)` where `x_1` are the
/// columns allowed to break. For a full break `x_2` is empty and the layout is
/// `(x_t', x_t'·1{t/T > ψ})`.
#[derive(Clone, Debug)]
pub struct BreakDesign<'a> {
    pub base: &'a RegressionPanel,
    pub psi: f64,
    pub split: usize,
    pub xaug: DMatrix<f64>,
    /// Panel columns interacted with the break indicator.
    pub break_cols: Vec<usize>,
    /// Remaining panel columns, entering with a stable coefficient.
    pub stable_cols: Vec<usize>,
}

impl BreakDesign<'_> {
    /// Number of restrictions tested (the dimension of the break block).
    pub fn restrictions(&self) -> usize {
        self.break_cols.len()
    }

    /// Column range of the break block inside `xaug`.
    pub fn break_block(&self) -> std::ops::Range<usize> {
        let p1 = self.break_cols.len();
        p1..2 * p1
    }

    /// Column indices of `xaug` that survive under the null (no break terms).
    pub fn null_columns(&self) -> Vec<usize> {
        let p1 = self.break_cols.len();
        (0..p1)
            .chain(2 * p1..2 * p1 + self.stable_cols.len())
            .collect()
    }
}

/// Full break design with row t = (x_t', x_t'·1{t > [Tψ]}).
pub fn build_break_design(panel: &RegressionPanel, psi: f64) -> Result<BreakDesign<'_>> {
    let all: Vec<usize> = (0..panel.ncols()).collect();
    build_partial_break_design(panel, &all, psi)
}

/// Design in which only `break_cols` are interacted with the break indicator.
pub fn build_partial_break_design<'a>(
    panel: &'a RegressionPanel,
    break_cols: &[usize],
    psi: f64,
) -> Result<BreakDesign<'a>> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "break fraction {psi} outside (0,1)"
        )));
    }
    let p = panel.ncols();
    if break_cols.is_empty() {
        return Err(Error::InvalidInput("break column set is empty".into()));
    }
    let mut cols = break_cols.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if cols.len() != break_cols.len() || cols.iter().any(|&c| c >= p) {
        return Err(Error::InvalidInput(format!(
            "invalid break columns {break_cols:?} for p = {p}"
        )));
    }
    let cols = break_cols.to_vec();
    let stable: Vec<usize> = (0..p).filter(|c| !cols.contains(c)).collect();
    let t = panel.nobs();
    let k = split_index(t, psi);
    let width = 2 * cols.len() + stable.len();
    if k < p + 1 || t - k < p + 1 {
        return Err(Error::InsufficientSplit {
            split: k,
            needed: p + 1,
            t,
        });
    }
    let x = panel.x();
    let p1 = cols.len();
    let mut xaug = DMatrix::zeros(t, width);
    for (j, &c) in cols.iter().enumerate() {
        for i in 0..t {
            let v = x[(i, c)];
            xaug[(i, j)] = v;
            if i >= k {
                xaug[(i, p1 + j)] = v;
            }
        }
    }
    for (j, &c) in stable.iter().enumerate() {
        xaug.set_column(2 * p1 + j, &x.column(c));
    }
    Ok(BreakDesign {
        base: panel,
        psi,
        split: k,
        xaug,
        break_cols: cols,
        stable_cols: stable,
    })
}

/// AR(p) design with intercept: row t = (1, y_{t-1}, …, y_{t-p}).
pub fn build_ar_design(series: &[f64], p: usize) -> Result<RegressionPanel> {
    let n = series.len();
    if n <= 3 * p + 2 {
        return Err(Error::TooFewObservations {
            have: n,
            need: 3 * p + 2,
        });
    }
    let t = n - p;
    let y: Vec<f64> = series[p..].to_vec();
    let mut x = DMatrix::zeros(t, p + 1);
    for i in 0..t {
        x[(i, 0)] = 1.0;
        for j in 1..=p {
            x[(i, j)] = series[p + i - j];
        }
    }
    let mut labels = vec!["const".to_string()];
    labels.extend((1..=p).map(|j| format!("y_lag{j}")));
    RegressionPanel::new(y, x, labels, p + 1)
}

/// ADL(p,p) design with intercept: row t = (1, y_{t-1..t-p}, z_{t-1..t-p}),
/// plus `z_t` right after the `y` lags when `contemporaneous` is set.
pub fn build_adl_design(
    y: &[f64],
    z: &[f64],
    p: usize,
    contemporaneous: bool,
) -> Result<RegressionPanel> {
    if y.len() != z.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: z.len(),
        });
    }
    let n = y.len();
    if p == 0 && !contemporaneous {
        return Err(Error::InvalidInput(
            "ADL(0,0) without the current exogenous value has no exogenous terms".into(),
        ));
    }
    if n <= 3 * p.max(1) {
        return Err(Error::TooFewObservations {
            have: n,
            need: 3 * p.max(1),
        });
    }
    let t = n - p;
    let width = 1 + 2 * p + usize::from(contemporaneous);
    let mut x = DMatrix::zeros(t, width);
    let mut labels = vec!["const".to_string()];
    labels.extend((1..=p).map(|j| format!("y_lag{j}")));
    if contemporaneous {
        labels.push("z".to_string());
    }
    labels.extend((1..=p).map(|j| format!("z_lag{j}")));
    for i in 0..t {
        let row = p + i;
        let mut c = 0;
        x[(i, c)] = 1.0;
        c += 1;
        for j in 1..=p {
            x[(i, c)] = y[row - j];
            c += 1;
        }
        if contemporaneous {
            x[(i, c)] = z[row];
            c += 1;
        }
        for j in 1..=p {
            x[(i, c)] = z[row - j];
            c += 1;
        }
    }
    RegressionPanel::new(y[p..].to_vec(), x, labels, p + 1)
}
