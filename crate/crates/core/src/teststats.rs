//! Exponential-family functionals of the Wald process and the end-to-end
//! robust test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bias_from_null, null_index, robust_curve, BiasCurve, BootstrapConfig, RobustCurve,
};
use crate::design::{BreakGrid, RegressionPanel};
use crate::error::{Error, Result};
use crate::estimator::{
    finish_curve, restricted_residuals, CovKind, CurveRoute, SingularPolicy, WaldCurve,
};
use crate::hlv::{hlv_from_residuals, HlvEstimate, KernelSpec};
use crate::limitdist::LimitTable;
use crate::rng::StreamKey;

/// Weight function J over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightJ {
    /// Equal mass on every grid point.
    #[default]
    Uniform,
    /// Trapezoid-rule weights for the grid spacing.
    Trapezoid,
    /// Nonnegative per-point weights, normalized to sum to one.
    User(Vec<f64>),
}

impl WeightJ {
    /// Normalized weights for the given grid fractions.
    pub fn weights(&self, fractions: &[f64]) -> Result<Vec<f64>> {
        let n = fractions.len();
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let raw: Vec<f64> = match self {
            WeightJ::Uniform => vec![1.0; n],
            WeightJ::Trapezoid => {
                if n == 1 {
                    vec![1.0]
                } else {
                    (0..n)
                        .map(|i| {
                            let left = if i > 0 {
                                fractions[i] - fractions[i - 1]
                            } else {
                                0.0
                            };
                            let right = if i + 1 < n {
                                fractions[i + 1] - fractions[i]
                            } else {
                                0.0
                            };
                            0.5 * (left + right)
                        })
                        .collect()
                }
            }
            WeightJ::User(w) => {
                if w.len() != n {
                    return Err(Error::LengthMismatch {
                        left: w.len(),
                        right: n,
                    });
                }
                if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "weights must be finite and nonnegative".into(),
                    ));
                }
                w.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Ok(raw.iter().map(|v| v / total).collect())
    }
}

/// Exponent c of the exponential transform, with exact tags for its limits.
///
/// Serialized as its display string ("0", "inf" or the number); a bare number
/// is accepted on input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "CTagRepr")]
#[derive(Default)]
pub enum CTag {
    /// c → 0: weighted average.
    Avg,
    Finite(f64),
    /// c → ∞: supremum.
    #[default]
    Sup,
}

impl fmt::Display for CTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CTag::Avg => write!(f, "0"),
            CTag::Finite(c) => write!(f, "{c}"),
            CTag::Sup => write!(f, "inf"),
        }
    }
}

impl FromStr for CTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "avg" => Ok(CTag::Avg),
            "inf" | "infinity" | "sup" => Ok(CTag::Sup),
            other => match other.parse::<f64>() {
                Ok(c) if c > 0.0 && c.is_finite() => Ok(CTag::Finite(c)),
                _ => Err(Error::InvalidInput(format!(
                    "c must be 0, inf or a positive number, got {s:?}"
                ))),
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CTagRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<CTagRepr> for CTag {
    type Error = Error;

    fn try_from(r: CTagRepr) -> Result<Self> {
        match r {
            CTagRepr::Number(c) => c.to_string().parse(),
            CTagRepr::Text(s) => s.parse(),
        }
    }
}

impl From<CTag> for String {
    fn from(c: CTag) -> String {
        c.to_string()
    }
}

/// (√2/c) log Σ_ψ J(ψ) exp((c/√2) curve(ψ)), evaluated as
/// m + log1p(Σ J expm1(a(x - m)))/a with m the maximum and a = c/√2, so that
/// neither large nor tiny c loses precision.
pub fn exp_transform(curve: &[f64], c: f64, weights: &[f64]) -> f64 {
    let a = c / std::f64::consts::SQRT_2;
    let m = curve
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.iter().sum();
    let s: f64 = curve
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, w)| w / total * (a * (x - m)).exp_m1())
        .sum();
    m + s.ln_1p() / a
}

/// [`exp_transform`] with the c → 0 and c → ∞ limits taken exactly.
pub fn exp_transform_tag(curve: &[f64], c: CTag, weights: &[f64]) -> f64 {
    match c {
        CTag::Avg => {
            let total: f64 = weights.iter().sum();
            curve.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total
        }
        CTag::Finite(c) => exp_transform(curve, c, weights),
        CTag::Sup => curve
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    /// Exponential transform of the robust process 𝓗ᵇ.
    ExpH,
    /// Exponential transform of the uncorrected Z process.
    ExpZ,
    /// sup_ψ W_T(ψ).
    SupW,
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatKind::ExpH => "exph",
            StatKind::ExpZ => "expz",
            StatKind::SupW => "supw",
        })
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exph" => Ok(StatKind::ExpH),
            "expz" => Ok(StatKind::ExpZ),
            "supw" => Ok(StatKind::SupW),
            _ => Err(Error::InvalidInput(format!("unknown test {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub kind: StatKind,
    pub c: CTag,
    pub pvalue: Option<f64>,
    /// Critical values keyed by nominal level, formatted like "0.05".
    pub critvals: BTreeMap<String, f64>,
    pub config_echo: serde_json::Value,
}

impl TestResult {
    fn new(statistic: f64, kind: StatKind, c: CTag) -> Self {
        TestResult {
            statistic,
            kind,
            c,
            pvalue: None,
            critvals: BTreeMap::new(),
            config_echo: serde_json::Value::Null,
        }
    }

    /// Attaches the p-value and the usual critical values from `table`.
    pub fn with_table(mut self, table: &LimitTable) -> Self {
        self.pvalue = Some(table.pvalue(self.statistic));
        for level in [0.10, 0.05, 0.01] {
            self.critvals
                .insert(format!("{level}"), table.critical_value(level));
        }
        self
    }

    /// Rejects at `level`: by p-value when present, else by the critical value.
    pub fn rejects(&self, level: f64) -> Option<bool> {
        if let Some(p) = self.pvalue {
            return Some(p < level);
        }
        self.critvals
            .get(&format!("{level}"))
            .map(|cv| self.statistic > *cv)
    }
}

pub fn exp_h(robust: &RobustCurve, c: CTag, j: &WeightJ) -> Result<TestResult> {
    let w = j.weights(&robust.grid.fractions)?;
    Ok(TestResult::new(
        exp_transform_tag(&robust.hb, c, &w),
        StatKind::ExpH,
        c,
    ))
}

pub fn exp_z(wald: &WaldCurve, c: CTag, j: &WeightJ) -> Result<TestResult> {
    let w = j.weights(&wald.grid.fractions)?;
    Ok(TestResult::new(
        exp_transform_tag(&wald.z, c, &w),
        StatKind::ExpZ,
        c,
    ))
}

pub fn sup_wald(wald: &WaldCurve) -> TestResult {
    let m = wald.w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    TestResult::new(m, StatKind::SupW, CTag::Sup)
}

/// Residuals entering the scores of the long-run variance estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HlvResiduals {
    /// Residuals of the no-break regression of y on x.
    #[default]
    Restricted,
    /// Residuals of the break-augmented fit at ψ̂ (the ones the bootstrap
    /// rescales).
    SplitAtPsiHat,
}

/// Settings of the robust test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cov_kind: CovKind,
    pub c: CTag,
    pub weights: WeightJ,
    pub kernel: KernelSpec,
    pub bootstrap: BootstrapConfig,
    /// Columns allowed to break; `None` tests all coefficients.
    pub break_cols: Option<Vec<usize>>,
    pub on_singular: SingularPolicy,
    pub hlv_residuals: HlvResiduals,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cov_kind: CovKind::EickerWhite,
            c: CTag::Sup,
            weights: WeightJ::Uniform,
            kernel: KernelSpec::default(),
            bootstrap: BootstrapConfig::default(),
            break_cols: None,
            on_singular: SingularPolicy::Abort,
            hlv_residuals: HlvResiduals::Restricted,
        }
    }
}

/// Everything computed along the way to the robust statistic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub result: TestResult,
    pub curve: WaldCurve,
    pub robust: RobustCurve,
    pub hlv: HlvEstimate,
    pub bias: BiasCurve,
}

/// Wald curve → ψ̂ → bootstrap bias → ω̂ → 𝓗ᵇ → statistic (→ p-value).
pub fn run_exph_pipeline(
    panel: &RegressionPanel,
    grid: &BreakGrid,
    config: &PipelineConfig,
    table: Option<&LimitTable>,
) -> Result<PipelineOutput> {
    run_exph_pipeline_keyed(
        panel,
        grid,
        config,
        table,
        StreamKey::new(config.bootstrap.seed),
    )
}

/// As [`run_exph_pipeline`], drawing bootstrap multipliers from `key`
/// instead of the configured seed.
pub fn run_exph_pipeline_keyed(
    panel: &RegressionPanel,
    grid: &BreakGrid,
    config: &PipelineConfig,
    table: Option<&LimitTable>,
    key: StreamKey,
) -> Result<PipelineOutput> {
    let y = panel.y().as_slice();
    let route = CurveRoute::new(panel, grid, config.break_cols.as_deref())?;
    let p = route.restrictions();
    let curve = finish_curve(
        grid,
        route.evaluate(y, config.cov_kind),
        p,
        config.cov_kind,
        config.on_singular,
    )?;
    let route = if curve.skipped.is_empty() {
        route
    } else {
        CurveRoute::new(panel, &curve.grid, config.break_cols.as_deref())?
    };
    robust_stage(panel, &route, curve, config, table, key)
}

/// Bootstrap, HLV and statistic for an already computed curve.
pub(crate) fn robust_stage(
    panel: &RegressionPanel,
    route: &CurveRoute<'_>,
    curve: WaldCurve,
    config: &PipelineConfig,
    table: Option<&LimitTable>,
    key: StreamKey,
) -> Result<PipelineOutput> {
    let y = panel.y().as_slice();
    let g = null_index(&curve.grid, &curve.sigma2, config.bootstrap.psi_for_null);
    let null = route.null_fit(y, g)?;
    let bias = bias_from_null(
        route,
        &null,
        config.cov_kind,
        config.bootstrap.replications,
        config.bootstrap.multiplier,
        key,
    )?;
    if !bias.is_valid() {
        return Err(Error::BootstrapInvalid {
            dropped: bias.dropped,
            requested: bias.requested,
        });
    }
    let x1 = match &config.break_cols {
        Some(cols) => panel.x().select_columns(cols.iter()),
        None => panel.x().clone(),
    };
    let nu = match config.hlv_residuals {
        HlvResiduals::Restricted => restricted_residuals(panel)?,
        HlvResiduals::SplitAtPsiHat => null.residuals.clone(),
    };
    let hlv = hlv_from_residuals(&x1, &nu, &config.kernel)?;
    let robust = robust_curve(&curve, &bias.mean, hlv.omega_hat)?;
    let mut result = exp_h(&robust, config.c, &config.weights)?;
    if let Some(t) = table {
        result = result.with_table(t);
    }
    result.config_echo = serde_json::json!({
        "pipeline": config,
        "psi_hat": curve.grid.fractions[g],
        "omega_hat": hlv.omega_hat,
        "restrictions": curve.p,
        "nobs": curve.nobs,
        "grid_points": curve.len(),
        "bootstrap_effective": bias.effective(),
    });
    Ok(PipelineOutput {
        result,
        curve,
        robust,
        hlv,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn constant_curve_is_fixed_point() {
        let curve = vec![1.7; 9];
        let w = uniform(9);
        for c in [1e-4, 0.3, 1.0, 10.0, 1e4] {
            assert!((exp_transform(&curve, c, &w) - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn limits_in_c() {
        let curve = [0.3, -1.2, 2.5, 0.9, 1.1];
        let w = uniform(5);
        let avg = curve.iter().sum::<f64>() / 5.0;
        assert!((exp_transform(&curve, 1e4, &w) - 2.5).abs() < 1e-3);
        assert!((exp_transform(&curve, 1e-4, &w) - avg).abs() < 1e-6 * 1e2);
        assert!((exp_transform(&curve, 1e-8, &w) - avg).abs() < 1e-6);
        assert_eq!(exp_transform_tag(&curve, CTag::Sup, &w), 2.5);
        assert!((exp_transform_tag(&curve, CTag::Avg, &w) - avg).abs() < 1e-15);
    }

    #[test]
    fn no_overflow() {
        let curve: Vec<f64> = (0..101).map(|i| -50.0 + i as f64).collect();
        let w = uniform(101);
        for c in [1e-6, 1.0, 1e3, 1e6] {
            let v = exp_transform(&curve, c, &w);
            assert!(v.is_finite() && v <= 50.0 + 1e-12);
        }
    }

    #[test]
    fn weights() {
        let f = [0.2, 0.3, 0.5];
        assert_eq!(WeightJ::Uniform.weights(&f).unwrap(), vec![1.0 / 3.0; 3]);
        let t = WeightJ::Trapezoid.weights(&f).unwrap();
        assert!((t[0] - 0.05 / 0.3).abs() < 1e-12 && (t[1] - 0.15 / 0.3).abs() < 1e-12);
        assert!(WeightJ::User(vec![1.0, -1.0, 1.0]).weights(&f).is_err());
        assert!(WeightJ::User(vec![0.0; 3]).weights(&f).is_err());
        assert_eq!(
            WeightJ::User(vec![0.0, 2.0, 0.0]).weights(&f).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn ctag_parse() {
        assert_eq!("inf".parse::<CTag>().unwrap(), CTag::Sup);
        assert_eq!("0".parse::<CTag>().unwrap(), CTag::Avg);
        assert_eq!("2.5".parse::<CTag>().unwrap(), CTag::Finite(2.5));
        assert!("-1".parse::<CTag>().is_err());
        assert!("x".parse::<CTag>().is_err());
    }

    #[test]
    fn point_mass_weight_picks_value() {
        let curve = [0.3, -1.2, 2.5];
        let w = [0.0, 1.0, 0.0];
        for c in [CTag::Avg, CTag::Finite(3.0), CTag::Sup] {
            assert!((exp_transform_tag(&curve, c, &w) + 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn ctag_serde_round_trip() {
        for c in [CTag::Avg, CTag::Sup, CTag::Finite(2.5)] {
            let j = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<CTag>(&j).unwrap(), c);
        }
        assert_eq!(
            serde_json::from_str::<CTag>("5").unwrap(),
            CTag::Finite(5.0)
        );
        assert_eq!(serde_json::from_str::<CTag>("0").unwrap(), CTag::Avg);
        assert!(serde_json::from_str::<CTag>("-1").is_err());
    }
}
