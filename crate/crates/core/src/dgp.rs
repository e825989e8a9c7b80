//! Simulation designs: bounded ARCH errors with normal-mixture innovations, a
//! distributed-lag regression and an MA(1) series fitted by an AR(p).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{build_ar_design, split_index, RegressionPanel};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Observations discarded at the start of every recursion.
pub const BURN_IN: usize = 200;

/// Innovation distribution η̄_t, always standardized to mean 0, variance 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mixture {
    /// Standard normal.
    #[default]
    Type1,
    /// Skewed unimodal: N(0,1), N(1/2,(2/3)²), N(13/12,(5/9)²) with
    /// probabilities 1/5, 1/5, 3/5.
    Type2,
}

const TYPE2_WEIGHTS: [f64; 3] = [0.2, 0.2, 0.6];
const TYPE2_MEANS: [f64; 3] = [0.0, 0.5, 13.0 / 12.0];
const TYPE2_SDS: [f64; 3] = [1.0, 2.0 / 3.0, 5.0 / 9.0];

/// Mean and variance of the raw type-2 mixture.
pub fn type2_moments() -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..3 {
        m1 += TYPE2_WEIGHTS[i] * TYPE2_MEANS[i];
        m2 += TYPE2_WEIGHTS[i] * (TYPE2_MEANS[i].powi(2) + TYPE2_SDS[i].powi(2));
    }
    (m1, m2 - m1 * m1)
}

/// Raw (unstandardized) type-2 draw.
fn type2_raw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let c = if u < TYPE2_WEIGHTS[0] {
        0
    } else if u < TYPE2_WEIGHTS[0] + TYPE2_WEIGHTS[1] {
        1
    } else {
        2
    };
    let z: f64 = rng.sample(StandardNormal);
    TYPE2_MEANS[c] + TYPE2_SDS[c] * z
}

pub fn mixture_draw<R: Rng + ?Sized>(kind: Mixture, rng: &mut R) -> f64 {
    match kind {
        Mixture::Type1 => rng.sample(StandardNormal),
        Mixture::Type2 => {
            let (m, v) = type2_moments();
            (type2_raw(rng) - m) / v.sqrt()
        }
    }
}

/// σ_t² = (1 - α) + α f(ν_{t-1}), f(x) = min(x², b²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub alpha: f64,
    pub bound: f64,
    pub mixture: Mixture,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            alpha: 0.0,
            bound: 2.5,
            mixture: Mixture::Type1,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "ARCH coefficient must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.bound > 0.0) {
            return Err(Error::InvalidInput("ARCH bound must be positive".into()));
        }
        Ok(())
    }
}

/// ARCH errors and their conditional variances.
#[derive(Clone, Debug)]
pub struct ArchPath {
    pub nu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// `n` ARCH errors after [`BURN_IN`] discarded steps, started from ν₀ with
/// σ₀² = 1.
pub fn arch_path<R: Rng + ?Sized>(n: usize, spec: &ArchSpec, rng: &mut R) -> Result<ArchPath> {
    spec.validate()?;
    let b2 = spec.bound * spec.bound;
    let mut prev = mixture_draw(spec.mixture, rng);
    let mut nu = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    for i in 0..BURN_IN + n {
        let s2 = (1.0 - spec.alpha) + spec.alpha * (prev * prev).min(b2);
        debug_assert!(s2 >= 1.0 - spec.alpha && s2 <= 1.0 - spec.alpha + spec.alpha * b2);
        prev = s2.sqrt() * mixture_draw(spec.mixture, rng);
        if i >= BURN_IN {
            nu.push(prev);
            sigma2.push(s2);
        }
    }
    Ok(ArchPath { nu, sigma2 })
}

pub fn arch_errors<R: Rng + ?Sized>(n: usize, spec: &ArchSpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(arch_path(n, spec, rng)?.nu)
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default, PartialOrd, Ord,
)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// y_t = x_t'β_t + ν_t with an intercept and lags 0..3 of AR(1) regressors.
    #[default]
    MultipleRegressionDl,
    /// MA(1) series whose MA coefficient vanishes after the break, fitted by
    /// an AR(p) with intercept.
    ArmaMa1,
}

/// One simulation design point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    /// Regression sample size.
    pub t: usize,
    /// Number of regressors (DL, of the form 1 + 4m) or AR order (ARMA).
    pub p: usize,
    pub arch: ArchSpec,
    /// AR(1) coefficient of the DL regressors.
    pub alpha_x: f64,
    /// d₀ for the DL design, θ for the MA design.
    pub magnitude: f64,
    /// True break fraction; `None` means no break.
    pub psi0: Option<f64>,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            family: Family::MultipleRegressionDl,
            t: 200,
            p: 5,
            arch: ArchSpec::default(),
            alpha_x: 0.5,
            magnitude: 0.0,
            psi0: None,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.t == 0 {
            return Err(Error::InvalidInput("sample size must be positive".into()));
        }
        if let Some(psi) = self.psi0 {
            if !(psi > 0.0 && psi < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "break fraction must lie in (0, 1), got {psi}"
                )));
            }
        }
        match self.family {
            Family::MultipleRegressionDl => {
                if self.p < 5 || !(self.p - 1).is_multiple_of(4) {
                    return Err(Error::InvalidInput(format!(
                        "distributed-lag design needs p = 1 + 4m with m ≥ 1, got {}",
                        self.p
                    )));
                }
                if !(self.alpha_x.abs() < 1.0) {
                    return Err(Error::InvalidInput(
                        "regressor AR coefficient must lie in (-1, 1)".into(),
                    ));
                }
            }
            Family::ArmaMa1 => {}
        }
        Ok(())
    }
}

/// A generated panel with the break that produced it.
#[derive(Clone, Debug)]
pub struct DgpSample {
    pub panel: RegressionPanel,
    /// Last pre-break row (1-based count of pre-break rows), if any.
    pub break_split: Option<usize>,
    /// Pre-break coefficient vector of the DL design; empty for the MA design.
    pub beta_pre: Vec<f64>,
}

/// d₀ 5^{-1/2} p^{1/4} T^{-1/2}, the common value of the first five
/// pre-break coefficients.
pub fn dl_coefficient(d0: f64, p: usize, t: usize) -> f64 {
    d0 / 5f64.sqrt() * (p as f64).powf(0.25) / (t as f64).sqrt()
}

/// Regressors: intercept, then for each of m = (p-1)/4 independent AR(1)
/// series its lags 0, 1, 2, 3. The first five coefficients are
/// [`dl_coefficient`] up to the break and zero after it; all others are zero.
pub fn dl_regression_sample<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<DgpSample> {
    spec.validate()?;
    let (t, p) = (spec.t, spec.p);
    let m = (p - 1) / 4;
    let mut x = DMatrix::zeros(t, p);
    for i in 0..t {
        x[(i, 0)] = 1.0;
    }
    for j in 0..m {
        // t + 3 values so that lags up to 3 exist for the first row.
        let e = arch_errors(t + 3 + BURN_IN, &spec.arch, rng)?;
        let mut level = 0.0;
        let mut series = Vec::with_capacity(e.len());
        for v in e {
            level = spec.alpha_x * level + v;
            series.push(level);
        }
        let series = &series[BURN_IN..];
        for i in 0..t {
            for lag in 0..4 {
                x[(i, 1 + 4 * j + lag)] = series[i + 3 - lag];
            }
        }
    }
    let coef = dl_coefficient(spec.magnitude, p, t);
    let mut beta_pre = vec![0.0; p];
    beta_pre[..5].iter_mut().for_each(|b| *b = coef);
    let split = spec.psi0.map(|psi| split_index(t, psi));
    let nu = arch_errors(t, &spec.arch, rng)?;
    let y: Vec<f64> = (0..t)
        .map(|i| {
            let pre = match split {
                Some(k) => i < k,
                None => true,
            };
            let signal = if pre {
                (0..5).map(|c| x[(i, c)] * beta_pre[c]).sum()
            } else {
                0.0
            };
            signal + nu[i]
        })
        .collect();
    let mut labels = vec!["const".to_string()];
    for j in 0..m {
        for lag in 0..4 {
            labels.push(format!("x{}_lag{lag}", j + 1));
        }
    }
    let panel = RegressionPanel::new(y, x, labels, 1)?;
    Ok(DgpSample {
        panel,
        break_split: split,
        beta_pre,
    })
}

/// y_t = ν_t + θ 1{t ≤ break_at} ν_{t-1}, t = 1..n (ν₀ drawn as well).
/// With `break_at = None` the MA term is present throughout.
pub fn ma1_sample<R: Rng + ?Sized>(
    n: usize,
    theta: f64,
    break_at: Option<usize>,
    arch: &ArchSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let nu = arch_errors(n + 1, arch, rng)?;
    Ok((1..=n)
        .map(|t| {
            let on = break_at.is_none_or(|k| t <= k);
            nu[t] + if on { theta * nu[t - 1] } else { 0.0 }
        })
        .collect())
}

/// MA(1) series of length T + p fitted by AR(p): the regression has T rows and
/// the break, if any, falls after row [Tψ₀] of the regression sample.
pub fn arma_sample<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<DgpSample> {
    spec.validate()?;
    let (t, p) = (spec.t, spec.p);
    let split = spec.psi0.map(|psi| split_index(t, psi));
    let series = ma1_sample(t + p, spec.magnitude, split.map(|k| k + p), &spec.arch, rng)?;
    let panel = build_ar_design(&series, p)?;
    Ok(DgpSample {
        panel,
        break_split: split,
        beta_pre: Vec::new(),
    })
}

/// Generates one sample of `spec` from the stream `key`.
pub fn generate(spec: &DgpSpec, key: StreamKey) -> Result<DgpSample> {
    let mut rng = key.rng();
    match spec.family {
        Family::MultipleRegressionDl => dl_regression_sample(spec, &mut rng),
        Family::ArmaMa1 => arma_sample(spec, &mut rng),
    }
}

/// κ₂ = 2^{1/4} ϱ p^{1/4} / √T for a unit direction ϱ.
pub fn local_alternative_coeff(varrho: &[f64], t: usize) -> Result<Vec<f64>> {
    let norm = varrho.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NonUnitDirection(norm));
    }
    let p = varrho.len() as f64;
    let scale = 2f64.powf(0.25) * p.powf(0.25) / (t as f64).sqrt();
    Ok(varrho.iter().map(|v| v * scale).collect())
}
