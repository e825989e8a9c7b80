//! Distributional checks of the simulated limit objects.

use hdbreak::limitdist::{
    sample_gaussian_paths, simulate_bessel_paths, simulate_bessel_sup, LimitConfig,
};
use hdbreak::rng::StreamKey;
use hdbreak::stats::{ks_normal, ks_two_sample, mean_var};

#[test]
fn z_marginals_are_standard_normal() {
    let grid = vec![0.15, 0.3, 0.5, 0.7, 0.85];
    let mut cfg = LimitConfig::new(grid.clone(), 100_000, 11);
    cfg.integration_points = 20;
    let paths = sample_gaussian_paths(&cfg, StreamKey::new(11).named("paths")).unwrap();
    for (g, psi) in grid.iter().enumerate() {
        let z: Vec<f64> = paths.iter().map(|p| p.z[g]).collect();
        let (d, pv) = ks_normal(&z);
        assert!(pv > 0.001, "ψ = {psi}: D = {d}, p = {pv}");
    }
}

#[test]
fn bessel_marginals_have_chi_square_moments() {
    let grid = vec![0.15, 0.4, 0.6, 0.85];
    let n = 20_000;
    for p in [1usize, 5, 18] {
        let draws = simulate_bessel_paths(p, &grid, n, StreamKey::new(p as u64)).unwrap();
        let pf = p as f64;
        for g in 0..grid.len() {
            let w: Vec<f64> = draws.iter().map(|d| d[g]).collect();
            let (m, v) = mean_var(&w);
            let se_m = (2.0 * pf / n as f64).sqrt();
            let se_v = ((8.0 * pf * pf + 48.0 * pf) / n as f64).sqrt();
            assert!(
                (m - pf).abs() < 4.0 * se_m,
                "p = {p}, ψ = {}: mean {m}",
                grid[g]
            );
            assert!(
                (v - 2.0 * pf).abs() < 4.0 * se_v,
                "p = {p}, ψ = {}: var {v}",
                grid[g]
            );
        }
    }
}

#[test]
fn standardized_bessel_sup_approaches_gaussian_sup() {
    let grid = LimitConfig::uniform_grid(0.15, 0.85, 15);
    let n = 20_000;
    let mut cfg = LimitConfig::new(grid.clone(), n, 5);
    cfg.integration_points = 20;
    let zsup: Vec<f64> = sample_gaussian_paths(&cfg, StreamKey::new(5).named("sup"))
        .unwrap()
        .iter()
        .map(|p| p.z.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let dist: Vec<f64> = [2usize, 8, 32, 128]
        .iter()
        .map(|&p| {
            let s: Vec<f64> = simulate_bessel_sup(p, &grid, n, StreamKey::new(100 + p as u64))
                .unwrap()
                .into_iter()
                .map(|w| (w - p as f64) / (2.0 * p as f64).sqrt())
                .collect();
            ks_two_sample(&s, &zsup)
        })
        .collect();
    assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
}
