//! Null-imposed wild bootstrap estimate of the bias of Z_T(ψ), and the robust
//! process 𝓗ᵇ_T(ψ) = (Z_T(ψ) - 𝒵̄*_T(ψ))/√ω̂.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{BreakGrid, RegressionPanel};
use crate::error::{Error, Result};
use crate::estimator::{center_scale, CovKind, CurveRoute, NullFit, WaldCurve};
use crate::rng::StreamKey;

/// Distribution of the wild-bootstrap multipliers υ_t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    #[default]
    Rademacher,
    /// Two-point distribution with third moment one.
    Mammen,
    Gaussian,
}

impl Multiplier {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Multiplier::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Multiplier::Mammen => {
                let s5 = 5f64.sqrt();
                let p_low = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p_low {
                    -(s5 - 1.0) / 2.0
                } else {
                    (s5 + 1.0) / 2.0
                }
            }
            Multiplier::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// Break fraction at which the null model is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NullPsi {
    /// ψ̂ = argmin σ̂²(ψ).
    #[default]
    ArgminSigma,
    /// The grid point closest to the given fraction.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
    pub psi_for_null: NullPsi,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 200,
            multiplier: Multiplier::Rademacher,
            seed: 0,
            psi_for_null: NullPsi::ArgminSigma,
        }
    }
}

/// Largest share of dropped replications tolerated before a run is invalid.
pub const MAX_DROP_SHARE: f64 = 0.01;

/// y*_t = x_t'κ̂₁ + û_t υ_t.
pub fn wild_resample<R: Rng + ?Sized>(
    panel: &RegressionPanel,
    kappa1_hat: &[f64],
    u_hat: &[f64],
    multiplier: Multiplier,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if kappa1_hat.len() != panel.ncols() {
        return Err(Error::LengthMismatch {
            left: kappa1_hat.len(),
            right: panel.ncols(),
        });
    }
    let fitted = panel.x() * DVector::from_column_slice(kappa1_hat);
    wild_from_fitted(fitted.as_slice(), u_hat, multiplier, rng)
}

/// Same as [`wild_resample`] with the null fit x_t'κ̂₁ already formed.
pub fn wild_from_fitted<R: Rng + ?Sized>(
    fitted: &[f64],
    u_hat: &[f64],
    multiplier: Multiplier,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if fitted.len() != u_hat.len() {
        return Err(Error::LengthMismatch {
            left: fitted.len(),
            right: u_hat.len(),
        });
    }
    Ok(fitted
        .iter()
        .zip(u_hat)
        .map(|(f, u)| f + u * multiplier.draw(rng))
        .collect())
}

/// Bootstrap mean 𝒵̄*_T(ψ) with replication accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiasCurve {
    pub mean: Vec<f64>,
    pub requested: usize,
    pub dropped: usize,
    pub psi_null: f64,
}

impl BiasCurve {
    pub fn effective(&self) -> usize {
        self.requested - self.dropped
    }

    /// False when more than 1% of the replications were dropped.
    pub fn is_valid(&self) -> bool {
        self.effective() > 0 && (self.dropped as f64) <= MAX_DROP_SHARE * self.requested as f64
    }
}

/// Grid position used for the null fit.
pub(crate) fn null_index(grid: &BreakGrid, sigma2: &[f64], rule: NullPsi) -> usize {
    match rule {
        NullPsi::ArgminSigma => crate::estimator::argmin_first(sigma2),
        NullPsi::Fixed(psi) => {
            let mut best = 0;
            for (g, &f) in grid.fractions.iter().enumerate() {
                if (f - psi).abs() < (grid.fractions[best] - psi).abs() {
                    best = g;
                }
            }
            best
        }
    }
}

/// Bias of the centered Wald process for the full-break test on `panel`.
pub fn bias_curve(
    panel: &RegressionPanel,
    grid: &BreakGrid,
    cov_kind: CovKind,
    config: &BootstrapConfig,
) -> Result<BiasCurve> {
    let route = CurveRoute::new(panel, grid, None)?;
    let y = panel.y().as_slice();
    let g = match config.psi_for_null {
        NullPsi::ArgminSigma => {
            let values = route.evaluate(y, cov_kind);
            if let Some((_, e)) = values.failures.into_iter().next() {
                return Err(e);
            }
            null_index(grid, &values.sigma2, config.psi_for_null)
        }
        rule => null_index(grid, &[], rule),
    };
    let null = route.null_fit(y, g)?;
    bias_from_null(
        &route,
        &null,
        cov_kind,
        config.replications,
        config.multiplier,
        StreamKey::new(config.seed),
    )
}

/// Runs the replications. Replication `j` draws its multipliers from
/// `key.child(j)`; results are reduced in replication order.
pub(crate) fn bias_from_null(
    route: &CurveRoute<'_>,
    null: &NullFit,
    cov_kind: CovKind,
    replications: usize,
    multiplier: Multiplier,
    key: StreamKey,
) -> Result<BiasCurve> {
    if replications == 0 {
        return Err(Error::InvalidInput(
            "bootstrap needs at least one replication".into(),
        ));
    }
    let p = route.restrictions();
    let n = route.grid().len();
    let draws: Vec<Option<Vec<f64>>> = (0..replications)
        .into_par_iter()
        .map(|j| {
            let mut rng = key.child(j as u64).rng();
            let ystar =
                wild_from_fitted(&null.fitted, &null.residuals, multiplier, &mut rng).ok()?;
            let v = route.evaluate(&ystar, cov_kind);
            if v.failures.is_empty() {
                Some(v.w.iter().map(|&w| center_scale(w, p)).collect())
            } else {
                None
            }
        })
        .collect();
    let mut sum = vec![0.0; n];
    let mut dropped = 0;
    for d in &draws {
        match d {
            Some(z) => sum.iter_mut().zip(z).for_each(|(s, v)| *s += v),
            None => dropped += 1,
        }
    }
    let kept = replications - dropped;
    let out = BiasCurve {
        mean: sum.iter().map(|s| s / kept.max(1) as f64).collect(),
        requested: replications,
        dropped,
        psi_null: null.psi,
    };
    if dropped > 0 {
        log::warn!("bootstrap dropped {dropped} of {replications} replications");
    }
    if kept == 0 {
        return Err(Error::BootstrapInvalid {
            dropped,
            requested: replications,
        });
    }
    Ok(out)
}

/// 𝓗ᵇ together with its ingredients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustCurve {
    pub grid: BreakGrid,
    pub hb: Vec<f64>,
    pub bias: Vec<f64>,
    pub omega_hat: f64,
    pub source: WaldCurve,
}

/// 𝓗ᵇ(ψ) = (Z(ψ) - 𝒵̄*(ψ))/√ω̂.
pub fn robust_curve(wald: &WaldCurve, bias: &[f64], omega_hat: f64) -> Result<RobustCurve> {
    if !(omega_hat > 0.0) {
        return Err(Error::NonpositiveOmega(omega_hat));
    }
    if bias.len() != wald.len() {
        return Err(Error::LengthMismatch {
            left: bias.len(),
            right: wald.len(),
        });
    }
    let root = omega_hat.sqrt();
    let hb = wald
        .z
        .iter()
        .zip(bias)
        .map(|(z, b)| (z - b) / root)
        .collect();
    Ok(RobustCurve {
        grid: wald.grid.clone(),
        hb,
        bias: bias.to_vec(),
        omega_hat,
        source: wald.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{make_grid, GridPolicy};
    use crate::estimator::wald_curve;
    use nalgebra::DMatrix;

    fn panel(t: usize) -> RegressionPanel {
        let mut rng = StreamKey::new(3).rng();
        let x = DMatrix::from_fn(t, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = (0..t)
            .map(|i| x[(i, 1)] * 0.5 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        RegressionPanel::from_parts(y, x).unwrap()
    }

    #[test]
    fn zero_residuals_reproduce_fit() {
        let p = panel(20);
        let kappa = [1.0, -0.5];
        let mut rng = StreamKey::new(1).rng();
        let a = wild_resample(&p, &kappa, &[0.0; 20], Multiplier::Gaussian, &mut rng).unwrap();
        let b = wild_resample(&p, &kappa, &[0.0; 20], Multiplier::Gaussian, &mut rng).unwrap();
        assert_eq!(a, b);
        for (i, v) in a.iter().enumerate() {
            assert_eq!(*v, p.x()[(i, 0)] * 1.0 + p.x()[(i, 1)] * -0.5);
        }
    }

    #[test]
    fn rademacher_two_point_support() {
        let fitted = [1.0, 2.0, 3.0];
        let u = [0.5, -0.25, 2.0];
        let mut rng = StreamKey::new(9).rng();
        for _ in 0..20 {
            let y = wild_from_fitted(&fitted, &u, Multiplier::Rademacher, &mut rng).unwrap();
            for i in 0..3 {
                assert!(y[i] == fitted[i] + u[i] || y[i] == fitted[i] - u[i]);
            }
        }
    }

    #[test]
    fn multiplier_moments() {
        let n = 200_000;
        for m in [
            Multiplier::Rademacher,
            Multiplier::Mammen,
            Multiplier::Gaussian,
        ] {
            let mut rng = StreamKey::new(5).rng();
            let d: Vec<f64> = (0..n).map(|_| m.draw(&mut rng)).collect();
            let mean = d.iter().sum::<f64>() / n as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(
                mean.abs() < 4.0 / (n as f64).sqrt() * 1.2,
                "{m:?} mean {mean}"
            );
            assert!(
                (var - 1.0).abs() < 5.0 / (n as f64).sqrt() * 1.5,
                "{m:?} var {var}"
            );
        }
    }

    #[test]
    fn single_replication_matches_hand_run() {
        let p = panel(60);
        let grid = make_grid(60, 0.2, 0.8, GridPolicy::EveryIndex).unwrap();
        let cfg = BootstrapConfig {
            replications: 1,
            seed: 11,
            ..Default::default()
        };
        let bias = bias_curve(&p, &grid, CovKind::EickerWhite, &cfg).unwrap();

        let curve = wald_curve(&p, &grid, CovKind::EickerWhite).unwrap();
        let g = curve.psi_hat_index();
        let route = CurveRoute::new(&p, &grid, None).unwrap();
        let null = route.null_fit(p.y().as_slice(), g).unwrap();
        let mut rng = StreamKey::new(11).child(0).rng();
        let ystar = wild_resample(
            &p,
            &null.kappa1,
            &null.residuals,
            Multiplier::Rademacher,
            &mut rng,
        )
        .unwrap();
        let star = wald_curve(
            &p.with_response(ystar).unwrap(),
            &grid,
            CovKind::EickerWhite,
        )
        .unwrap();
        for (a, b) in bias.mean.iter().zip(&star.z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn robust_curve_scaling() {
        let p = panel(40);
        let grid = make_grid(40, 0.2, 0.8, GridPolicy::EveryIndex).unwrap();
        let curve = wald_curve(&p, &grid, CovKind::EickerWhite).unwrap();
        let zero = vec![0.0; curve.len()];
        let r = robust_curve(&curve, &zero, 1.0).unwrap();
        assert_eq!(r.hb, curve.z);
        let r = robust_curve(&curve, &zero, 4.0).unwrap();
        for (h, z) in r.hb.iter().zip(&curve.z) {
            assert_eq!(*h, z / 2.0);
        }
        assert!(matches!(
            robust_curve(&curve, &zero, 0.0),
            Err(Error::NonpositiveOmega(_))
        ));
        assert!(matches!(
            robust_curve(&curve, &zero, -1.0),
            Err(Error::NonpositiveOmega(_))
        ));
    }
}
