//! Identities of the centering and of the exponential transform on random curves.
#![allow(dead_code)]

use hdbreak::design::BreakGrid;
use hdbreak::estimator::{CovKind, WaldCurve};
use hdbreak::rng::StreamKey;
use hdbreak::teststats::{exp_transform, exp_transform_tag, CTag};
use rand::Rng;

pub fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let (x, y) = (a.to_bits() as i64, b.to_bits() as i64);
    if (x < 0) != (y < 0) {
        return u64::MAX;
    }
    x.abs_diff(y)
}

/// Runs `cases` random draws of every identity; returns the first violation.
pub fn check_identities(cases: u64, seed: u64) -> Result<(), String> {
    let grid =
        BreakGrid::from_fractions(100, &[0.2, 0.35, 0.5, 0.65, 0.8]).map_err(|e| e.to_string())?;
    for case in 0..cases {
        let mut rng = StreamKey::new(seed).named("identities").child(case).rng();
        let p = rng.random_range(1..60usize);
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..200.0)).collect();
        let curve = WaldCurve::from_values(
            grid.clone(),
            w.clone(),
            vec![1.0; 5],
            p,
            CovKind::EickerWhite,
        )
        .map_err(|e| e.to_string())?;
        for (z, w) in curve.z.iter().zip(&w) {
            let expect = (w - p as f64) / (2.0 * p as f64).sqrt();
            if ulps(*z, expect) > 4 {
                return Err(format!("case {case}: Z {z} vs {expect}"));
            }
        }

        let n = rng.random_range(2..40usize);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let wt: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let c = rng.random_range(0.01..50.0);
        let a = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + a).collect();
        let lhs = exp_transform(&shifted, c, &wt);
        let rhs = exp_transform(&x, c, &wt) + a;
        if (lhs - rhs).abs() > 1e-9 * (1.0 + rhs.abs()) {
            return Err(format!("case {case}: shift {lhs} vs {rhs}"));
        }

        let dc = rng.random_range(0.0..30.0);
        let lo = exp_transform(&x, c, &wt);
        let hi = exp_transform(&x, c + dc, &wt);
        if lo > hi + 1e-10 * (1.0 + hi.abs()) {
            return Err(format!("case {case}: not monotone in c, {lo} > {hi}"));
        }

        let avg = exp_transform_tag(&x, CTag::Avg, &wt);
        let sup = exp_transform_tag(&x, CTag::Sup, &wt);
        let tol = 1e-10 * (1.0 + sup.abs().max(avg.abs()));
        if !(avg <= lo + tol && lo <= sup + tol) {
            return Err(format!("case {case}: {avg} <= {lo} <= {sup} violated"));
        }
    }
    Ok(())
}
