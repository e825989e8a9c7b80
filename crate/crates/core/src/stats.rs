//! Small goodness-of-fit helpers used to check simulated laws.

use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Asymptotic Kolmogorov tail P(K > λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// sup |F_n - F| for a continuous `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS test against N(0, 1): (D, asymptotic p-value), with the
/// small-sample correction of Stephens.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let nd = Normal::standard();
    let d = ks_statistic(sample, |v| nd.cdf(v));
    let sn = (sample.len() as f64).sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

/// sup |F_a - F_b| between two empirical laws.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_tail(0.1), 1.0);
    }

    #[test]
    fn ks_accepts_normal_and_rejects_shift() {
        let mut rng = StreamKey::new(3).rng();
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_normal(&x).1 > 0.001);
        let y: Vec<f64> = x.iter().map(|v| v + 0.2).collect();
        assert!(ks_normal(&y).1 < 1e-6);
        assert!(ks_two_sample(&x, &x) == 0.0);
        assert!(
            (ks_two_sample(&x, &y)
                - ks_statistic(&x, |v| {
                    let nd = Normal::standard();
                    nd.cdf(v - 0.2)
                }))
            .abs()
                < 0.05
        );
    }

    #[test]
    fn two_sample_by_hand() {
        assert!((ks_two_sample(&[1.0, 2.0, 3.0], &[2.5, 3.5]) - 2.0 / 3.0).abs() < 1e-15);
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((m, v), (2.5, 5.0 / 3.0));
    }
}
