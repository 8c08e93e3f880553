//! Statistical verification: KS tests, characteristic functions, tail fits,
//! bootstrap intervals and a calibration harness for the tests themselves.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use crate::batch::{map_trials, trial_rng};
use crate::error::{Result, SimError};

/// Outcome of one statistical check. `pass` is decided only by the declared threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub n: usize,
    pub pass: bool,
    pub seed: u64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::EmptySample);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic Kolmogorov tail probability with the small-sample correction of Stephens.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS two-sample test; passes when the p-value exceeds `level`.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> Result<TestReport> {
    let d = ks_statistic(a, b)?;
    let p = ks_p_value(d, a.len(), b.len());
    Ok(TestReport {
        name: "ks_two_sample".into(),
        statistic: d,
        p_value: Some(p),
        ci: None,
        n: a.len() + b.len(),
        pass: p > level,
        seed: 0,
    })
}

/// Empirical characteristic function E[e^{iux}].
pub fn empirical_cf(samples: &[f64], u: f64) -> Result<Complex64> {
    if samples.is_empty() {
        return Err(SimError::EmptySample);
    }
    let s: Complex64 = samples.iter().map(|&x| Complex64::from_polar(1.0, u * x)).sum();
    Ok(s / samples.len() as f64)
}

/// Percentile bootstrap interval for |E[e^{iux}]|.
pub fn cf_magnitude_ci(samples: &[f64], u: f64, n_boot: usize, conf: f64, seed: u64) -> Result<[f64; 2]> {
    if samples.is_empty() {
        return Err(SimError::EmptySample);
    }
    let phases: Vec<Complex64> = samples.iter().map(|&x| Complex64::from_polar(1.0, u * x)).collect();
    let n = phases.len();
    let mut mags = map_trials(n_boot, |b| {
        let mut rng = trial_rng(seed, b as u64);
        let s: Complex64 = (0..n).map(|_| phases[rng.random_range(0..n)]).sum();
        (s / n as f64).norm()
    });
    mags.sort_by(f64::total_cmp);
    Ok(percentile_pair(&mags, conf))
}

fn percentile_pair(sorted_vals: &[f64], conf: f64) -> [f64; 2] {
    let alpha = (1.0 - conf) / 2.0;
    let idx = |q: f64| ((q * (sorted_vals.len() - 1) as f64).round() as usize).min(sorted_vals.len() - 1);
    [sorted_vals[idx(alpha)], sorted_vals[idx(1.0 - alpha)]]
}

/// Rayleigh test of uniformity on the circle: under the null, n|cf|^2 is asymptotically Exp(1).
pub fn rayleigh_test(angles: &[f64], level: f64) -> Result<TestReport> {
    let cf = empirical_cf(angles, 1.0)?;
    let stat = angles.len() as f64 * cf.norm_sqr();
    let p = (-stat).exp();
    Ok(TestReport { name: "rayleigh".into(), statistic: stat, p_value: Some(p), ci: None, n: angles.len(), pass: p > level, seed: 0 })
}

/// Chi-square goodness of fit of `values` to the uniform law on [lo, hi).
pub fn chi_square_uniform(values: &[f64], lo: f64, hi: f64, bins: usize, level: f64) -> Result<TestReport> {
    if values.is_empty() {
        return Err(SimError::EmptySample);
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((bins - 1) as f64).map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let p = 1.0 - dist.cdf(stat);
    Ok(TestReport {
        name: "chi_square_uniform".into(),
        statistic: stat,
        p_value: Some(p),
        ci: None,
        n: values.len(),
        pass: p > level,
        seed: 0,
    })
}

/// Exact two-sided binomial test of `k` successes in `n` trials against `p0`.
pub fn binomial_test(k: u64, n: u64, p0: f64, level: f64) -> Result<TestReport> {
    let dist = Binomial::new(p0, n).map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let pk = dist.pmf(k);
    let p: f64 = (0..=n).map(|i| dist.pmf(i)).filter(|&q| q <= pk * (1.0 + 1e-9)).sum();
    Ok(TestReport {
        name: "binomial".into(),
        statistic: k as f64 / n as f64,
        p_value: Some(p.min(1.0)),
        ci: Some(wilson_interval(k, n, 1.96)),
        n: n as usize,
        pass: p > level,
        seed: 0,
    })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> [f64; 2] {
    let nf = n as f64;
    let ph = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (ph + z * z / (2.0 * nf)) / denom;
    let half = z * (ph * (1.0 - ph) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    [(centre - half).max(0.0), (centre + half).min(1.0)]
}

/// Sample mean with a normal-approximation interval.
pub fn mean_ci(samples: &[f64], z: f64) -> Result<(f64, [f64; 2])> {
    if samples.len() < 2 {
        return Err(SimError::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = z * (var / n).sqrt();
    Ok((mean, [mean - half, mean + half]))
}

/// Power-law fit of a survival function P[X > x] ~ x^{-exponent}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailFit {
    pub exponent: f64,
    pub ci: [f64; 2],
    pub x_lo: f64,
    pub x_hi: f64,
    pub n: usize,
}

const TAIL_POINTS: usize = 24;
const TAIL_BOOT: usize = 200;

fn survival_slope(sorted_vals: &[f64], x_lo: f64, x_hi: f64) -> Option<f64> {
    let n = sorted_vals.len() as f64;
    let (l0, l1) = (x_lo.ln(), x_hi.ln());
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..TAIL_POINTS {
        let lx = l0 + (l1 - l0) * k as f64 / (TAIL_POINTS - 1) as f64;
        let x = lx.exp();
        let above = sorted_vals.len() - sorted_vals.partition_point(|&v| v <= x);
        if above == 0 {
            continue;
        }
        let s = above as f64 / n;
        // Poisson weighting: Var(log S) ~ 1/(nS)
        let w = above as f64;
        let ly = s.ln();
        sw += w;
        sx += w * lx;
        sy += w * ly;
        sxx += w * lx * lx;
        sxy += w * lx * ly;
    }
    let det = sw * sxx - sx * sx;
    (det > 0.0).then(|| (sw * sxy - sx * sy) / det)
}

/// Fit the survival exponent over an explicit window `[x_lo, x_hi]` with a bootstrap interval.
pub fn tail_exponent_fit_window(samples: &[f64], x_lo: f64, x_hi: f64, seed: u64) -> Result<TailFit> {
    if !(x_lo > 0.0 && x_hi > x_lo) {
        return Err(SimError::Range(format!("empty window [{x_lo}, {x_hi}]")));
    }
    let s = sorted(samples);
    let slope = survival_slope(&s, x_lo, x_hi).ok_or_else(|| SimError::Range("degenerate window".into()))?;
    let n = s.len();
    let mut boots: Vec<f64> = map_trials(TAIL_BOOT, |b| {
        let mut rng = trial_rng(seed, b as u64);
        let r: Vec<f64> = (0..n).map(|_| s[rng.random_range(0..n)]).collect();
        survival_slope(&sorted(&r), x_lo, x_hi).map_or(f64::NAN, |v| -v)
    })
    .into_iter()
    .filter(|v| v.is_finite())
    .collect();
    if boots.is_empty() {
        return Err(SimError::Range("bootstrap produced no finite fits".into()));
    }
    boots.sort_by(f64::total_cmp);
    Ok(TailFit { exponent: -slope, ci: percentile_pair(&boots, 0.95), x_lo, x_hi, n })
}

/// Survival-exponent fit over the window from the upper decile to the eleventh-largest sample.
///
/// Requires at least 1000 positive samples spanning `decades` orders of magnitude.
pub fn tail_exponent_fit(samples: &[f64], decades: u32, seed: u64) -> Result<TailFit> {
    if samples.len() < 1000 {
        return Err(SimError::Range(format!("{} samples, need at least 1000", samples.len())));
    }
    let s = sorted(samples);
    let (min, max) = (s[0], s[s.len() - 1]);
    if !(min > 0.0) || (max / min).log10() < decades as f64 {
        return Err(SimError::Range(format!("samples span [{min}, {max}], fewer than {decades} decades")));
    }
    // upper decile down to the 11th-largest sample: a bounded support shows up as a steep slope there
    let x_lo = s[s.len() * 9 / 10];
    let x_hi = s[s.len() - 11];
    if x_hi <= x_lo {
        return Err(SimError::Range("tail window collapsed".into()));
    }
    tail_exponent_fit_window(&s, x_lo, x_hi, seed)
}

/// First hitting times of `level` by a reflected Brownian motion with variance `speed` per unit time,
/// started at 0. Crossings between grid points are detected with the Brownian-bridge
/// maximum law so the discrete overshoot bias stays negligible.
pub fn reflected_bm_hitting_sample(level: f64, speed: f64, n: usize, seed: u64) -> Vec<f64> {
    let dt = 1e-3 * level * level / speed;
    let sd = (speed * dt).sqrt();
    map_trials(n, |i| {
        let mut rng = trial_rng(seed, i as u64);
        let (mut x, mut k) = (0.0f64, 0u64);
        loop {
            k += 1;
            let z: f64 = rng.sample(StandardNormal);
            let y = (x + sd * z).abs();
            if y >= level {
                return k as f64 * dt;
            }
            let cross = (-2.0 * (level - x) * (level - y) / (sd * sd)).exp();
            if rng.random::<f64>() < cross {
                return (k as f64 - 0.5) * dt;
            }
            x = y;
        }
    })
}

/// Sizes and levels for the calibration harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub seeds: usize,
    pub level: f64,
    pub sample_size: usize,
    /// z-score of the binomial interval the observed false-failure rate must cover.
    pub interval_z: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { seeds: 200, level: 0.05, sample_size: 1000, interval_z: 3.29 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub test: String,
    pub failures: usize,
    pub runs: usize,
    pub level: f64,
    pub rate_interval: [f64; 2],
    pub pass: bool,
}

/// Run each test on null data across many seeds and check the false-failure rate against its level.
pub fn calibration_suite(cfg: &CalibrationConfig, seed: u64) -> Result<Vec<CalibrationReport>> {
    type NullTest = fn(&mut rand_chacha::ChaCha8Rng, usize, f64) -> Result<TestReport>;
    let tests: [(&str, NullTest); 4] = [
        ("ks_two_sample", |rng, n, lvl| {
            let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            ks_two_sample(&a, &b, lvl)
        }),
        ("rayleigh", |rng, n, lvl| {
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
            rayleigh_test(&a, lvl)
        }),
        ("chi_square_uniform", |rng, n, lvl| {
            let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            chi_square_uniform(&a, 0.0, 1.0, 20, lvl)
        }),
        ("binomial", |rng, n, lvl| {
            let k = (0..n).filter(|_| rng.random::<bool>()).count() as u64;
            binomial_test(k, n as u64, 0.5, lvl)
        }),
    ];
    let mut out = Vec::new();
    for (t, (name, test)) in tests.iter().enumerate() {
        let runs: Vec<Result<bool>> = map_trials(cfg.seeds, |s| {
            let mut rng = trial_rng(seed.wrapping_add(t as u64), s as u64);
            test(&mut rng, cfg.sample_size, cfg.level).map(|r| r.pass)
        });
        let mut failures = 0;
        for r in runs {
            if !r? {
                failures += 1;
            }
        }
        let ci = wilson_interval(failures as u64, cfg.seeds as u64, cfg.interval_z);
        out.push(CalibrationReport {
            test: name.to_string(),
            failures,
            runs: cfg.seeds,
            level: cfg.level,
            rate_interval: ci,
            pass: ci[0] <= cfg.level && cfg.level <= ci[1],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [0.3, 0.1, 0.7, 0.2];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ks_shifted_uniform_fails() {
        let mut rng = trial_rng(1, 0);
        let a: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        let r = ks_two_sample(&a, &b, 0.01).unwrap();
        assert!(!r.pass);
        assert!((r.statistic - 0.5).abs() < 0.05);
    }

    #[test]
    fn ks_empty_sample_errors() {
        assert_eq!(ks_statistic(&[], &[1.0]), Err(SimError::EmptySample));
    }

    #[test]
    fn cf_of_constant_zero_is_one() {
        let cf = empirical_cf(&[0.0; 10], 1.0).unwrap();
        assert!((cf - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn cf_of_deterministic_uniform_grid_vanishes() {
        let n = 4096;
        let grid: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
        assert!(empirical_cf(&grid, 1.0).unwrap().norm() < 1e-10);
    }

    #[test]
    fn cf_of_random_uniform_is_small_on_most_seeds() {
        let small = (0..100)
            .filter(|&s| {
                let mut rng = trial_rng(5, s);
                let a: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * TAU).collect();
                empirical_cf(&a, 1.0).unwrap().norm() < 0.05
            })
            .count();
        assert!(small >= 95, "{small}");
    }

    #[test]
    fn ks_uniform_null_rarely_rejects() {
        let ok = (0..100)
            .filter(|&s| {
                let mut rng = trial_rng(9, s);
                let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
                let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
                ks_two_sample(&a, &b, 0.01).unwrap().pass
            })
            .count();
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn pareto_tail_exponent_recovered() {
        let mut rng = trial_rng(3, 0);
        let a: Vec<f64> = (0..100_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect();
        let fit = tail_exponent_fit(&a, 1, 17).unwrap();
        assert!((fit.exponent - 1.5).abs() < 0.05, "{fit:?}");
        assert!(fit.ci[0] < 1.5 && 1.5 < fit.ci[1], "{fit:?}");
    }

    #[test]
    fn constant_samples_have_no_range() {
        let a = vec![2.0; 5000];
        assert!(matches!(tail_exponent_fit(&a, 1, 0), Err(SimError::Range(_))));
    }

    #[test]
    fn bounded_mixture_shows_no_heavy_tail() {
        let mut rng = trial_rng(4, 0);
        let a: Vec<f64> =
            (0..20_000).map(|_| if rng.random::<bool>() { 0.1 + 0.9 * rng.random::<f64>() } else { 1.0 + rng.random::<f64>() }).collect();
        let fit = tail_exponent_fit(&a, 1, 5).unwrap();
        assert!(fit.ci[0] > 5.0, "{fit:?}");
    }

    #[test]
    fn hitting_time_mean_matches_level_squared_over_speed() {
        for speed in [1.0, 2.0] {
            let t = reflected_bm_hitting_sample(1.0, speed, 4000, 21);
            let (m, ci) = mean_ci(&t, 3.0).unwrap();
            assert!(ci[0] < 1.0 / speed && 1.0 / speed < ci[1], "speed {speed}: mean {m}");
        }
        assert_eq!(reflected_bm_hitting_sample(1.0, 1.0, 5, 3), reflected_bm_hitting_sample(1.0, 1.0, 5, 3));
    }

    #[test]
    fn binomial_interval_covers_half() {
        let r = binomial_test(5000, 10_000, 0.5, 0.01).unwrap();
        assert!(r.pass);
        let ci = r.ci.unwrap();
        assert!(ci[0] < 0.5 && 0.5 < ci[1]);
    }
}
