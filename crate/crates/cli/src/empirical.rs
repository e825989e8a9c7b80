//! Robust and sup-Wald tests on a data panel, and the AR/ADL stability
//! application built on top.

use std::collections::BTreeMap;

use hdbreak::bootstrap::{BootstrapConfig, Multiplier};
use hdbreak::design::{build_adl_design, build_ar_design, make_grid, GridPolicy, RegressionPanel};
use hdbreak::estimator::CovKind;
use hdbreak::hlv::KernelSpec;
use hdbreak::limitdist::{
    empirical_quantile, limit_statistic_draws, pvalue_from_sorted, simulate_bessel_sup,
    LimitConfig, TableCache,
};
use hdbreak::rng::StreamKey;
use hdbreak::teststats::{run_exph_pipeline, sup_wald, CTag, PipelineConfig, TestResult, WeightJ};
use serde::{Deserialize, Serialize};

use crate::dataset::{growth_rate, oil_transform, DataError, Dataset, OilTransform, TimeKey};

/// Settings shared by the `test` and `empirical` commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub trim: [f64; 2],
    pub cov_kind: CovKind,
    pub c: CTag,
    pub bandwidth: f64,
    pub bootstrap: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
    /// Draws of each simulated null distribution.
    pub draws: usize,
    pub integration_points: usize,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            trim: [0.15, 0.85],
            cov_kind: CovKind::EickerWhite,
            c: CTag::Sup,
            bandwidth: 1.0,
            bootstrap: 200,
            multiplier: Multiplier::Rademacher,
            seed: 1,
            draws: 10_000,
            integration_points: 500,
        }
    }
}

/// Headline numbers of one test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub statistic: f64,
    pub pvalue: Option<f64>,
    pub critvals: BTreeMap<String, f64>,
}

impl From<&TestResult> for StatSummary {
    fn from(r: &TestResult) -> Self {
        StatSummary {
            statistic: r.statistic,
            pvalue: r.pvalue,
            critvals: r.critvals.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub nobs: usize,
    pub restrictions: usize,
    pub grid_points: usize,
    pub psi_hat: f64,
    pub omega_hat: f64,
    pub exph: StatSummary,
    pub supw: StatSummary,
    /// Bootstrap replications kept for the bias estimate.
    pub bootstrap_effective: usize,
    pub table_checksum: String,
    /// Sample first and last dates, when the panel came from a dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<[String; 2]>,
    pub config: serde_json::Value,
}

/// Runs ExpH (with its simulated table) and supW (against the simulated
/// sup-Bessel law for the realized restriction count) on `panel`.
pub fn run_panel_tests(
    panel: &RegressionPanel,
    settings: &TestSettings,
    cache: Option<&TableCache>,
) -> hdbreak::Result<Report> {
    let [c1, c2] = settings.trim;
    let grid = make_grid(panel.nobs(), c1, c2, GridPolicy::EveryIndex)?;
    grid.check_margin(panel.ncols())?;
    let kernel = KernelSpec::new(settings.bandwidth, 1.0)?;
    let mut limit = LimitConfig::new(grid.fractions.clone(), settings.draws, settings.seed);
    limit.c = settings.c;
    limit.kernel = kernel;
    limit.integration_points = settings.integration_points;
    let table = match cache {
        Some(c) => c.get_or_build(&limit)?,
        None => limit_statistic_draws(&limit)?,
    };
    let config = PipelineConfig {
        cov_kind: settings.cov_kind,
        c: settings.c,
        weights: WeightJ::Uniform,
        kernel,
        bootstrap: BootstrapConfig {
            replications: settings.bootstrap,
            multiplier: settings.multiplier,
            seed: settings.seed,
            ..BootstrapConfig::default()
        },
        ..PipelineConfig::default()
    };
    let out = run_exph_pipeline(panel, &grid, &config, Some(&table))?;
    let q = out.curve.p;
    let key = StreamKey::new(settings.seed)
        .named("bessel")
        .child(q as u64);
    let mut bessel = simulate_bessel_sup(q, &grid.fractions, settings.draws, key)?;
    bessel.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut supw = sup_wald(&out.curve);
    supw.pvalue = Some(pvalue_from_sorted(&bessel, supw.statistic));
    for level in [0.10, 0.05, 0.01] {
        supw.critvals
            .insert(format!("{level}"), empirical_quantile(&bessel, 1.0 - level));
    }
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        nobs: panel.nobs(),
        restrictions: q,
        grid_points: grid.len(),
        psi_hat: out.curve.psi_hat,
        omega_hat: out.hlv.omega_hat,
        exph: StatSummary::from(&out.result),
        supw: StatSummary::from(&supw),
        bootstrap_effective: out.bias.effective(),
        table_checksum: table.checksum.clone(),
        sample: None,
        config: serde_json::to_value(settings).expect("settings serialize"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Ar,
    Adl,
}

/// Stability test of an AR(p) or ADL(p,p) model for a growth-rate series,
/// optionally driven by a transformed oil price.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalSpec {
    /// Level series whose growth rate is modeled.
    pub response: String,
    /// Oil price level series; needed for ADL.
    pub oil: Option<String>,
    pub transform: OilTransform,
    /// Look-back of the net increase, in periods.
    pub window: usize,
    pub model: Model,
    pub p: usize,
    pub start: Option<TimeKey>,
    pub end: Option<TimeKey>,
    pub settings: TestSettings,
}

impl Default for EmpiricalSpec {
    fn default() -> Self {
        EmpiricalSpec {
            response: "GDPC1".into(),
            oil: None,
            transform: OilTransform::O,
            window: 4,
            model: Model::Ar,
            p: 4,
            start: None,
            end: None,
            settings: TestSettings::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmpiricalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stats(#[from] hdbreak::Error),
}

/// Growth rate of `levels` placed on the dataset index (`None` where
/// undefined).
fn aligned_growth(levels: &[f64]) -> Result<Vec<Option<f64>>, DataError> {
    let g = growth_rate(levels)?;
    Ok(std::iter::once(None)
        .chain(g.into_iter().map(Some))
        .collect())
}

/// The exogenous series of the ADL model on the dataset index.
pub fn oil_series(
    levels: &[f64],
    kind: OilTransform,
    window: usize,
) -> Result<Vec<Option<f64>>, DataError> {
    match kind {
        OilTransform::O | OilTransform::OPlus => {
            let g = growth_rate(levels)?;
            let o = oil_transform(&g, kind, window)?;
            Ok(std::iter::once(None)
                .chain(o.into_iter().map(Some))
                .collect())
        }
        OilTransform::ONet => {
            if let Some((index, &value)) = levels.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(DataError::NonPositiveLevel { index, value });
            }
            let logs: Vec<f64> = levels.iter().map(|v| v.ln()).collect();
            let net = oil_transform(&logs, kind, window)?;
            Ok(std::iter::repeat_n(None, window)
                .chain(net.into_iter().map(|v| Some(100.0 * v)))
                .collect())
        }
    }
}

/// Regression panel whose rows are the observations inside the subsample;
/// lags reach back before its start.
pub fn empirical_panel(
    data: &Dataset,
    spec: &EmpiricalSpec,
) -> Result<(RegressionPanel, [TimeKey; 2]), EmpiricalError> {
    if spec.p == 0 {
        return Err(DataError::Invalid("p must be at least 1".into()).into());
    }
    let y = aligned_growth(data.column(&spec.response)?)?;
    let z = match spec.model {
        Model::Ar => None,
        Model::Adl => {
            let name = spec
                .oil
                .as_deref()
                .ok_or_else(|| DataError::Invalid("ADL model needs an oil series".into()))?;
            Some(oil_series(data.column(name)?, spec.transform, spec.window)?)
        }
    };
    // Without a start date the sample begins once every lag is defined.
    let defined = |i: usize| y[i].is_some() && z.as_ref().is_none_or(|z| z[i].is_some());
    let earliest = match spec.start {
        Some(_) => 0,
        None => (0..data.len())
            .find(|&i| defined(i))
            .map_or(data.len(), |i| i + spec.p),
    };
    let inside: Vec<usize> = (earliest..data.len())
        .filter(|&i| {
            spec.start.is_none_or(|s| data.index[i] >= s)
                && spec.end.is_none_or(|e| data.index[i] <= e)
        })
        .collect();
    let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
        return Err(DataError::EmptySubsample(format!("{:?}–{:?}", spec.start, spec.end)).into());
    };
    if first < spec.p {
        return Err(DataError::Invalid(format!(
            "{} lags reach before the first observation",
            spec.p
        ))
        .into());
    }
    let from = first - spec.p;
    let take = |s: &[Option<f64>], name: &str| -> Result<Vec<f64>, DataError> {
        s[from..=last]
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.filter(|x| x.is_finite()).ok_or_else(|| {
                    DataError::Invalid(format!(
                        "{name} is undefined at {} (needed for lags)",
                        data.index[from + j]
                    ))
                })
            })
            .collect()
    };
    let ys = take(&y, &spec.response)?;
    let panel = match &z {
        None => build_ar_design(&ys, spec.p)?,
        Some(z) => build_adl_design(
            &ys,
            &take(z, spec.oil.as_deref().unwrap_or("oil"))?,
            spec.p,
            false,
        )?,
    };
    Ok((panel, [data.index[first], data.index[last]]))
}

pub fn run_empirical(
    data: &Dataset,
    spec: &EmpiricalSpec,
    cache: Option<&TableCache>,
) -> Result<Report, EmpiricalError> {
    let (panel, [a, b]) = empirical_panel(data, spec)?;
    let mut report = run_panel_tests(&panel, &spec.settings, cache)?;
    report.sample = Some([a.to_string(), b.to_string()]);
    report.config = serde_json::to_value(spec).expect("spec serializes");
    Ok(report)
}
