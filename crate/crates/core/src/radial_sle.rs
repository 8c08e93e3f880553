//! The reflected theta-process of radial SLE_{kappa'}(kappa'-6), its driving function,
//! the cut-off excursion decomposition, Bessel excursions and the uniform CLE_4 driver.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::trial_rng;
use crate::error::{Result, SimError};
use crate::loewner::DrivingProcess;

/// Bessel dimension of `theta / sqrt(kappa')` near the barrier.
pub fn bessel_dimension(kappa_prime: f64) -> f64 {
    3.0 - 8.0 / kappa_prime
}

/// `kappa' = 16 / gamma^2` with `gamma = 2 - eps`.
pub fn kappa_prime_from_eps(eps: f64) -> f64 {
    16.0 / (2.0 - eps).powi(2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaParams {
    pub kappa_prime: f64,
    pub x0: f64,
    pub t_max: f64,
    pub step: f64,
    pub reflect_tol: f64,
    pub barrier_guard: f64,
    /// Stop the path at the first top hit instead of reflecting.
    pub stop_at_top: bool,
}

impl Default for ThetaParams {
    fn default() -> Self {
        Self { kappa_prime: 6.0, x0: 0.0, t_max: 10.0, step: 1e-4, reflect_tol: 1e-4, barrier_guard: 2.0, stop_at_top: true }
    }
}

/// A grid path of theta on `[0, 2 pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPath {
    pub kappa_prime: f64,
    pub x0: f64,
    pub step: f64,
    pub reflect_tol: f64,
    pub values: Vec<f64>,
    /// Grid indices where theta touched 0: value below `reflect_tol` or reflected at 0 during the step.
    pub zero_touch: Vec<bool>,
    pub tau0: Option<f64>,
    pub tau0_index: Option<usize>,
}

impl ThetaPath {
    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }
}

#[inline]
fn capped_cot_half(theta: f64, cap: f64) -> f64 {
    (1.0 / (theta / 2.0).tan()).clamp(-cap, cap)
}

/// Euler-Maruyama for `d theta = sqrt(k) dB + (k - 4)/2 cot(theta/2) dt` with symmetric reflection at 0 and 2 pi.
pub fn simulate_theta(p: &ThetaParams, seed: u64) -> Result<ThetaPath> {
    if !(4.0..8.0).contains(&p.kappa_prime) {
        return Err(SimError::InvalidParameter(format!("kappa' = {} outside [4, 8)", p.kappa_prime)));
    }
    if !(p.step > 0.0) || !(0.0..=TAU).contains(&p.x0) {
        return Err(SimError::InvalidParameter(format!("step {} / x0 {}", p.step, p.x0)));
    }
    let mut rng = trial_rng(seed, 0);
    let m = (p.t_max / p.step).round() as usize;
    let cap = 1.0 / p.reflect_tol;
    let coef = (p.kappa_prime - 4.0) / 2.0;
    let sd = (p.kappa_prime * p.step).sqrt();
    let top_level = TAU - p.reflect_tol;

    let mut values = Vec::with_capacity(m.min(1 << 24) + 1);
    let mut zero_touch = Vec::with_capacity(m.min(1 << 24) + 1);
    values.push(p.x0);
    zero_touch.push(p.x0 < p.reflect_tol);
    let (mut tau0, mut tau0_index) = (None, None);
    if p.x0 >= top_level {
        tau0 = Some(0.0);
        tau0_index = Some(0);
        if p.stop_at_top {
            values[0] = TAU;
            return Ok(ThetaPath {
                kappa_prime: p.kappa_prime,
                x0: p.x0,
                step: p.step,
                reflect_tol: p.reflect_tol,
                values,
                zero_touch,
                tau0,
                tau0_index,
            });
        }
    }
    let mut theta = p.x0;
    for k in 0..m {
        let drift = coef * capped_cot_half(theta, cap);
        if (drift * p.step).abs() > p.barrier_guard {
            return Err(SimError::Stiffness((drift * p.step).abs()));
        }
        let z: f64 = rng.sample(StandardNormal);
        let mut next = theta + drift * p.step + sd * z;
        let (mut hit_zero, mut hit_top) = (false, false);
        loop {
            if next < 0.0 {
                next = -next;
                hit_zero = true;
            } else if next > TAU {
                next = 2.0 * TAU - next;
                hit_top = true;
            } else {
                break;
            }
        }
        theta = next;
        let idx = k + 1;
        hit_top |= theta >= top_level;
        if hit_top && tau0.is_none() {
            tau0 = Some(idx as f64 * p.step);
            tau0_index = Some(idx);
            if p.stop_at_top {
                values.push(TAU);
                zero_touch.push(false);
                break;
            }
        }
        values.push(theta);
        zero_touch.push(hit_zero || theta < p.reflect_tol);
    }
    Ok(ThetaPath { kappa_prime: p.kappa_prime, x0: p.x0, step: p.step, reflect_tol: p.reflect_tol, values, zero_touch, tau0, tau0_index })
}

/// Phase `theta_t - int_0^t cot(theta_s/2) ds` at every grid time, trapezoid rule with the capped cot.
fn phase_series(values: &[f64], step: f64, cap: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut integral = 0.0;
    let mut prev = capped_cot_half(values[0], cap);
    out.push(values[0]);
    for &v in &values[1..] {
        let c = capped_cot_half(v, cap);
        integral += 0.5 * step * (prev + c);
        prev = c;
        out.push(v - integral);
    }
    out
}

fn is_kappa_four(kappa_prime: f64) -> bool {
    (kappa_prime - 4.0).abs() < 1e-12
}

/// Angles of `W_t = root * exp(i (theta_t - int_0^t cot(theta_s / 2) ds))` at every grid time of the path,
/// endpoint included.
///
/// With this convention the force point sits clockwise from `W` at angular distance theta.
pub fn driving_angles(path: &ThetaPath, root_angle: f64) -> Result<Vec<f64>> {
    if is_kappa_four(path.kappa_prime) {
        let n = path.values.len();
        if let Some(k) = (1..n.saturating_sub(1)).find(|&k| path.zero_touch[k]) {
            return Err(SimError::CotDivergence(k as f64 * path.step));
        }
    }
    Ok(phase_series(&path.values, path.step, 1.0 / path.reflect_tol).into_iter().map(|a| root_angle + a).collect())
}

/// Driving process on `[0, duration]` built from the theta path.
pub fn driving_from_theta(path: &ThetaPath, root_angle: f64) -> Result<DrivingProcess> {
    let mut a = driving_angles(path, root_angle)?;
    a.pop();
    DrivingProcess::new(path.step, a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    pub start_time: f64,
    pub end_time: f64,
    pub values: Vec<f64>,
    pub max_height: f64,
    pub reached_top: bool,
}

impl ExcursionRecord {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionDecomposition {
    pub threshold_exponent: i32,
    pub records: Vec<ExcursionRecord>,
    /// Index of the first record that reaches the top.
    pub stop_index: usize,
    pub cut_driving: DrivingProcess,
}

impl ExcursionDecomposition {
    /// Total retained duration.
    pub fn cut_duration(&self) -> f64 {
        self.records.iter().map(ExcursionRecord::duration).sum()
    }
}

/// Grid index ranges `[a, b]` of the excursions of the path before its first top hit.
fn excursion_ranges(path: &ThetaPath) -> Result<Vec<(usize, usize)>> {
    let top = path.tau0_index.ok_or(SimError::NoTopHit(path.duration()))?;
    let mut ranges = Vec::new();
    let mut start = 0usize;
    for k in 1..top {
        if path.zero_touch[k] {
            if k - start >= 2 {
                ranges.push((start, k));
            }
            start = k;
        }
    }
    ranges.push((start, top));
    Ok(ranges)
}

fn record_for(path: &ThetaPath, a: usize, b: usize, reached_top: bool) -> ExcursionRecord {
    let mut values = path.values[a..=b].to_vec();
    values[0] = 0.0;
    let last = values.len() - 1;
    values[last] = if reached_top { TAU } else { 0.0 };
    let max_height = values.iter().copied().fold(0.0, f64::max);
    ExcursionRecord { start_time: a as f64 * path.step, end_time: b as f64 * path.step, values, max_height, reached_top }
}

fn retained_ranges(path: &ThetaPath, n: i32) -> Result<Vec<(usize, usize)>> {
    let threshold = 2f64.powi(-n);
    if threshold < path.reflect_tol {
        return Err(SimError::Resolution { requested: threshold, grid: path.reflect_tol });
    }
    let ranges = excursion_ranges(path)?;
    let last = ranges.len() - 1;
    Ok(ranges
        .into_iter()
        .enumerate()
        .filter(|&(i, (a, b))| i == last || path.values[a..=b].iter().any(|&v| v >= threshold))
        .map(|(_, r)| r)
        .collect())
}

/// Keep the excursions of height at least `2^{-n}` before the first top hit and concatenate their drivers.
///
/// For kappa' > 4 the driver is the full-path driver restricted to the retained excursions. For
/// kappa' = 4 the cot integral is restarted at the start of every excursion with root angle 0.
pub fn excursion_decompose(path: &ThetaPath, n: i32) -> Result<ExcursionDecomposition> {
    decompose_with_roots(path, n, |_| 0.0)
}

fn decompose_with_roots(path: &ThetaPath, n: i32, root: impl Fn(usize) -> f64) -> Result<ExcursionDecomposition> {
    let kept = retained_ranges(path, n)?;
    let cap = 1.0 / path.reflect_tol;
    let full = if is_kappa_four(path.kappa_prime) { None } else { Some(driving_angles(path, 0.0)?) };
    let mut angles = Vec::new();
    let mut records = Vec::with_capacity(kept.len());
    let last = kept.len() - 1;
    for (i, &(a, b)) in kept.iter().enumerate() {
        let rec = record_for(path, a, b, i == last);
        match &full {
            Some(f) => angles.extend(f[a..b].iter().map(|x| x + root(i))),
            None => angles.extend(phase_series(&rec.values, path.step, cap)[..b - a].iter().map(|x| x + root(i))),
        }
        records.push(rec);
    }
    Ok(ExcursionDecomposition {
        threshold_exponent: n,
        stop_index: records.len() - 1,
        records,
        cut_driving: DrivingProcess::new(path.step, angles)?,
    })
}

/// Uniform CLE_4 exploration driver: reflected Brownian theta (kappa' = 4) cut at `2^{-n}`,
/// with an independent uniform root angle per retained excursion.
pub fn uniform_cle4_driving(n: i32, t_max: f64, step: f64, seed: u64) -> Result<(ExcursionDecomposition, Vec<f64>)> {
    let params = ThetaParams { kappa_prime: 4.0, x0: 0.0, t_max, step, ..ThetaParams::default() };
    uniform_cle4_from(&simulate_theta(&params, seed)?, n, seed)
}

/// The uniform CLE_4 driver on a given kappa' = 4 path; roots come from their own stream of `seed`.
pub fn uniform_cle4_from(path: &ThetaPath, n: i32, seed: u64) -> Result<(ExcursionDecomposition, Vec<f64>)> {
    if !is_kappa_four(path.kappa_prime) {
        return Err(SimError::InvalidParameter("uniform CLE_4 driver needs kappa' = 4".into()));
    }
    let count = retained_ranges(path, n)?.len();
    let mut rng = trial_rng(seed, 1);
    let roots: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * TAU).collect();
    let d = decompose_with_roots(path, n, |i| roots[i])?;
    Ok((d, roots))
}

/// `arg X_1`: the driver angle at the start of the first excursion reaching `2^{-n}`, for a path started at 0
/// with root angle 0, i.e. `-int_0^{S_1} cot(theta_s / 2) ds` modulo 2 pi. Runs only as long as needed.
pub fn first_excursion_root_angle(kappa_prime: f64, n: i32, step: f64, reflect_tol: f64, seed: u64) -> Result<f64> {
    let threshold = 2f64.powi(-n);
    if threshold < reflect_tol {
        return Err(SimError::Resolution { requested: threshold, grid: reflect_tol });
    }
    let mut rng = trial_rng(seed, 0);
    let cap = 1.0 / reflect_tol;
    let coef = (kappa_prime - 4.0) / 2.0;
    let sd = (kappa_prime * step).sqrt();
    let (mut theta, mut integral, mut at_zero) = (0.0f64, 0.0f64, 0.0f64);
    let mut prev = capped_cot_half(0.0, cap);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let mut next = theta + coef * prev * step + sd * z;
        let mut touched = false;
        if next < 0.0 {
            next = -next;
            touched = true;
        }
        let c = capped_cot_half(next, cap);
        integral += 0.5 * step * (prev + c);
        prev = c;
        theta = next;
        if touched || theta < reflect_tol {
            at_zero = integral;
        } else if theta >= threshold {
            return Ok((-at_zero).rem_euclid(TAU));
        }
    }
}

/// Maximum height of a Bessel-delta excursion above `min_height`: density proportional to `x^{delta-3}`.
pub fn sample_excursion_height<R: Rng>(delta: f64, min_height: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    min_height * u.powf(1.0 / (delta - 2.0))
}

/// Path of a Bessel(4 - delta) process from 0 until it first reaches `level`, via its square (Euler).
fn bessel_ascent<R: Rng>(dim: f64, level: f64, dt: f64, rng: &mut R) -> Vec<f64> {
    let sd = dt.sqrt();
    let target = level * level;
    let mut y = 0.0f64;
    let mut out = vec![0.0];
    while y < target {
        let z: f64 = rng.sample(StandardNormal);
        y = (y + dim * dt + 2.0 * y.sqrt() * sd * z).max(0.0);
        out.push(y.sqrt().min(level));
    }
    out
}

/// Bessel-delta excursion with maximum height above `min_height`, built from its
/// maximum and two Bessel(4 - delta) pieces: up to the maximum, then an independent reversed copy.
/// If the maximum is at least `top`, the excursion stops at `top`.
pub fn sample_bessel_excursion(delta: f64, min_height: f64, top: f64, seed: u64) -> Result<ExcursionRecord> {
    if !(1.0..2.0).contains(&delta) {
        return Err(SimError::BadDimension(delta));
    }
    if !(0.0 < min_height && min_height < top) {
        return Err(SimError::InvalidParameter(format!("need 0 < min_height {min_height} < top {top}")));
    }
    let mut rng = trial_rng(seed, 0);
    let x = sample_excursion_height(delta, min_height, &mut rng);
    let peak = x.min(top);
    let dt = (peak / 100.0).powi(2);
    let dim = 4.0 - delta;
    let mut values = bessel_ascent(dim, peak, dt, &mut rng);
    let reached_top = x >= top;
    if !reached_top {
        let mut down = bessel_ascent(dim, peak, dt, &mut rng);
        down.pop();
        values.extend(down.into_iter().rev());
    }
    let end_time = (values.len() - 1) as f64 * dt;
    Ok(ExcursionRecord { start_time: 0.0, end_time, max_height: peak, values, reached_top })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean_ci, tail_exponent_fit};
    use std::f64::consts::PI;

    fn params(kappa_prime: f64, x0: f64, t_max: f64) -> ThetaParams {
        ThetaParams { kappa_prime, x0, t_max, ..ThetaParams::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = params(6.0, 0.1, 1.0);
        assert_eq!(simulate_theta(&p, 5).unwrap(), simulate_theta(&p, 5).unwrap());
    }

    #[test]
    fn values_stay_in_range() {
        let p = ThetaParams { stop_at_top: false, ..params(6.0, 0.1, 5.0) };
        let path = simulate_theta(&p, 2).unwrap();
        assert!(path.values.iter().all(|v| (0.0..=TAU).contains(v)));
    }

    #[test]
    fn kappa_four_is_reflected_bm_with_variance_four() {
        // single step from the middle: no drift, variance 4 * step
        let p = ThetaParams { step: 1e-3, ..params(4.0, PI, 1e-3) };
        let incs: Vec<f64> = (0..20_000).map(|s| simulate_theta(&p, s).unwrap().values[1] - PI).collect();
        let var = incs.iter().map(|x| x * x).sum::<f64>() / incs.len() as f64;
        assert!((var / 4e-3 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn one_step_mean_from_pi_is_pi() {
        let p = ThetaParams { step: 1e-3, ..params(6.0, PI, 1e-3) };
        let v: Vec<f64> = (0..20_000).map(|s| simulate_theta(&p, s).unwrap().values[1]).collect();
        let (_, ci) = mean_ci(&v, 3.0).unwrap();
        assert!(ci[0] < PI && PI < ci[1], "{ci:?}");
    }

    #[test]
    fn kappa_four_law_is_symmetric_about_pi() {
        let p = ThetaParams { step: 1e-3, stop_at_top: false, ..params(4.0, PI, 0.5) };
        let v: Vec<f64> = (0..4000).map(|s| *simulate_theta(&p, s).unwrap().values.last().unwrap() - PI).collect();
        let n = v.len() as f64;
        let m2 = v.iter().map(|x| x * x).sum::<f64>() / n;
        let m3 = v.iter().map(|x| x * x * x).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 4.0 * (6.0 / n).sqrt(), "{skew}");
    }

    #[test]
    fn stiffness_guard_triggers() {
        let p = ThetaParams { step: 1e-2, ..params(7.0, 0.0, 1.0) };
        assert!(matches!(simulate_theta(&p, 1), Err(SimError::Stiffness(_))));
    }

    #[test]
    fn driver_starts_at_x0_and_ignores_constant_pi() {
        let path = simulate_theta(&params(6.0, 0.7, 0.01), 1).unwrap();
        let a = driving_angles(&path, 0.0).unwrap();
        assert_eq!(a[0], 0.7);
        let flat = ThetaPath { values: vec![PI; 100], zero_touch: vec![false; 100], ..path };
        let a = driving_angles(&flat, 0.0).unwrap();
        assert!((a[99] - a[0]).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_phase_agrees_with_simpson_over_an_excursion() {
        let p = ThetaParams { step: 1e-5, stop_at_top: false, ..params(6.0, 1.0, 0.2) };
        let path = simulate_theta(&p, 3).unwrap();
        let rec = ExcursionRecord { start_time: 0.0, end_time: 0.2, max_height: 0.0, values: path.values.clone(), reached_top: false };
        let cap = 1.0 / path.reflect_tol;
        let trap = *phase_series(&rec.values, path.step, cap).last().unwrap() - rec.values.last().unwrap();
        let f: Vec<f64> = rec.values.iter().map(|&v| capped_cot_half(v, cap)).collect();
        let n = f.len() - 1;
        let even = n - n % 2;
        let mut simpson = f[0] + f[even];
        for (k, v) in f.iter().enumerate().take(even).skip(1) {
            simpson += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        simpson *= path.step / 3.0;
        if even < n {
            simpson += 0.5 * path.step * (f[n - 1] + f[n]);
        }
        assert!((-trap - simpson).abs() < 1e-3, "trap {} simpson {simpson}", -trap);
    }

    #[test]
    fn cot_divergence_for_kappa_four_across_zero() {
        let p = ThetaParams { step: 1e-3, stop_at_top: false, ..params(4.0, 0.0, 2.0) };
        let path = simulate_theta(&p, 1).unwrap();
        assert!(matches!(driving_from_theta(&path, 0.0), Err(SimError::CotDivergence(_))));
    }

    #[test]
    fn decomposition_examples() {
        let p = ThetaParams { step: 1e-4, t_max: 60.0, ..params(4.0, 0.0, 60.0) };
        let path = simulate_theta(&p, 4).unwrap();
        let d = excursion_decompose(&path, -3).unwrap();
        assert_eq!(d.records.len(), 1);
        assert!(d.records[0].reached_top);
        assert!(matches!(excursion_decompose(&path, 20), Err(SimError::Resolution { .. })));
        let mut prev = 0.0;
        for n in [0, 2, 4, 8, 12] {
            let d = excursion_decompose(&path, n).unwrap();
            assert!(d.cut_duration() >= prev - 1e-12);
            assert!(d.cut_duration() <= path.tau0.unwrap() + 1e-12);
            assert!((d.cut_driving.duration() - d.cut_duration()).abs() < 1e-9);
            assert_eq!(d.stop_index, d.records.len() - 1);
            prev = d.cut_duration();
        }
    }

    #[test]
    fn cle4_driving_is_deterministic() {
        let a = uniform_cle4_driving(6, 60.0, 1e-3, 9).unwrap();
        let b = uniform_cle4_driving(6, 60.0, 1e-3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), a.0.records.len());
    }

    #[test]
    fn bessel_height_tail_delta_one_halves_at_twice_min() {
        let mut rng = trial_rng(1, 0);
        let n = 100_000;
        let k = (0..n).filter(|_| sample_excursion_height(1.0, 0.01, &mut rng) > 0.02).count();
        let ph = k as f64 / n as f64;
        assert!((ph - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{ph}");
    }

    #[test]
    fn bessel_height_density_exponent() {
        let mut rng = trial_rng(2, 0);
        let h: Vec<f64> = (0..100_000).map(|_| sample_excursion_height(1.5, 1e-3, &mut rng)).collect();
        let fit = tail_exponent_fit(&h, 2, 3).unwrap();
        // density exponent = -(survival exponent + 1)
        assert!((-(fit.exponent + 1.0) + 1.5).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn bessel_excursion_shapes() {
        assert!(matches!(sample_bessel_excursion(2.5, 0.1, 1.0, 1), Err(SimError::BadDimension(_))));
        for seed in 0..20 {
            let e = sample_bessel_excursion(1.5, 0.1, 0.3, seed).unwrap();
            assert_eq!(e.values[0], 0.0);
            if e.reached_top {
                assert_eq!(*e.values.last().unwrap(), 0.3);
            } else {
                assert_eq!(*e.values.last().unwrap(), 0.0);
                assert!(e.max_height >= 0.1);
            }
            assert!(e.values.iter().all(|&v| v <= e.max_height));
        }
    }
}
