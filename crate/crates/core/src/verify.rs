//! Verification suites behind `motsim verify`. Sizes and thresholds come from [`VerifyConfig`];
//! each suite returns a [`SuiteReport`] whose `pass` drives the exit code.

use std::f64::consts::TAU;

use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{child_seed, map_trials, trial_rng};
use crate::burgers::scaling_estimates;
use crate::error::{Result, SimError};
use crate::exploration::{assign_order_variables, explore_branching_with, order_from_colors, ExplorationConfig};
use crate::loewner::{solve_radial_loewner, DrivingProcess};
use crate::lqg::{sample_quantum_disk, DiskConfig};
use crate::mating::{
    a_eps, ancestor_free_times, cone_transform, estimate_ppp_exponent, increment_variance, local_time_and_jumps, sample_cone_excursion,
    sample_free_path, sample_half_plane_excursion, ConeSamplerConfig, LedgerConfig, PppConfig,
};
use crate::radial_sle::{first_excursion_root_angle, kappa_prime_from_eps, uniform_cle4_driving};
use crate::stats::{calibration_suite, empirical_cf, ks_statistic, tail_exponent_fit, wilson_interval, CalibrationConfig, TestReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Loewner,
    Modulus,
    Uniformization,
    Tau0,
    Order,
    Disk,
    MatingVariance,
    MatingPpp,
    Ledger,
    Burgers,
    Calibration,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Loewner,
        Suite::Modulus,
        Suite::Uniformization,
        Suite::Tau0,
        Suite::Order,
        Suite::Disk,
        Suite::MatingVariance,
        Suite::MatingPpp,
        Suite::Ledger,
        Suite::Burgers,
        Suite::Calibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Loewner => "loewner",
            Suite::Modulus => "modulus",
            Suite::Uniformization => "uniformization",
            Suite::Tau0 => "tau0",
            Suite::Order => "order",
            Suite::Disk => "disk",
            Suite::MatingVariance => "mating-variance",
            Suite::MatingPpp => "mating-ppp",
            Suite::Ledger => "ledger",
            Suite::Burgers => "burgers",
            Suite::Calibration => "calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<TestReport>,
    pub pass: bool,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, checks: Vec<TestReport>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { suite: suite.name().into(), seed, checks, pass }
    }
}

fn check(name: impl Into<String>, statistic: f64, ci: Option<[f64; 2]>, n: usize, pass: bool, seed: u64) -> TestReport {
    TestReport { name: name.into(), statistic, p_value: None, ci, n, pass, seed }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoewnerSuite {
    pub drivers: usize,
    pub kappa: f64,
    pub horizon: f64,
    pub step: f64,
    pub tol: f64,
    /// Tracked points per driver for the modulus suite.
    pub points: usize,
    pub modulus_tol: f64,
}

impl Default for LoewnerSuite {
    fn default() -> Self {
        Self { drivers: 50, kappa: 6.0, horizon: 2.0, step: 1e-3, tol: 1e-3, points: 200, modulus_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformizationSuite {
    pub epsilons: Vec<f64>,
    pub n: i32,
    pub samples: usize,
    pub step: f64,
    pub reflect_tol: f64,
    pub max_cf: f64,
}

impl Default for UniformizationSuite {
    fn default() -> Self {
        Self { epsilons: vec![0.4, 0.2, 0.1], n: 6, samples: 10_000, step: 1e-7, reflect_tol: 1e-5, max_cf: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tau0Suite {
    pub coarse_n: i32,
    pub fine_n: i32,
    pub samples: usize,
    pub t_max: f64,
    pub step: f64,
    pub max_ks: f64,
}

impl Default for Tau0Suite {
    fn default() -> Self {
        Self { coarse_n: 8, fine_n: 12, samples: 10_000, t_max: 400.0, step: 1e-3, max_ks: 0.02 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderSuite {
    /// Target sets explored at kappa' = 4 for the transitivity check.
    pub sets: usize,
    pub targets_per_set: usize,
    pub horizon: f64,
    pub trials: usize,
    pub kappa_near: f64,
    pub kappa_far: f64,
    pub radius: f64,
    pub band: [f64; 2],
    pub exploration: ExplorationConfig,
}

impl Default for OrderSuite {
    fn default() -> Self {
        Self {
            sets: 200,
            targets_per_set: 5,
            horizon: 40.0,
            trials: 2000,
            kappa_near: 4.5,
            kappa_far: 6.0,
            radius: 0.3,
            band: [0.42, 0.58],
            exploration: ExplorationConfig { loops: false, ..ExplorationConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiskSuite {
    pub gamma: f64,
    pub samples: usize,
    pub norm_tol: f64,
    pub tail_decades: u32,
    pub min_exponent: f64,
    pub disk: DiskConfig,
}

impl Default for DiskSuite {
    fn default() -> Self {
        Self { gamma: 2.0, samples: 10_000, norm_tol: 1e-6, tail_decades: 1, min_exponent: 1.0 / 17.0, disk: DiskConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatingVarianceSuite {
    pub gammas: Vec<f64>,
    pub paths: usize,
    pub duration: f64,
    pub step: f64,
    pub rel_tol: f64,
    pub anchor_samples: usize,
    pub cone: ConeSamplerConfig,
}

impl Default for MatingVarianceSuite {
    fn default() -> Self {
        Self {
            gammas: vec![1.7, 1.9, 2.0],
            paths: 200,
            duration: 1.0,
            step: 1e-4,
            rel_tol: 0.03,
            anchor_samples: 20,
            cone: ConeSamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PppSuite {
    pub gammas: Vec<f64>,
    pub paths: usize,
    pub tol: f64,
    pub ppp: PppConfig,
}

impl Default for PppSuite {
    fn default() -> Self {
        Self { gammas: vec![1.8, 2.0], paths: 1000, tol: 0.1, ppp: PppConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerSuite {
    pub paths: usize,
    pub step: f64,
    pub max_residual: f64,
    pub max_c_spread: f64,
    /// Allowed gap between accounted time and the reference time, in grid steps.
    pub max_time_steps: f64,
    pub ledger: LedgerConfig,
}

impl Default for LedgerSuite {
    fn default() -> Self {
        Self { paths: 1000, step: 1e-5, max_residual: 0.02, max_c_spread: 0.1, max_time_steps: 2.0, ledger: LedgerConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersSuite {
    pub ps: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub tol: f64,
}

impl Default for BurgersSuite {
    fn default() -> Self {
        Self { ps: vec![0.0, 0.25, 0.4], n: 100_000, trials: 200, tol: 0.05 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub loewner: LoewnerSuite,
    pub uniformization: UniformizationSuite,
    pub tau0: Tau0Suite,
    pub order: OrderSuite,
    pub disk: DiskSuite,
    pub mating_variance: MatingVarianceSuite,
    pub mating_ppp: PppSuite,
    pub ledger: LedgerSuite,
    pub burgers: BurgersSuite,
    pub calibration: CalibrationConfig,
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Loewner => loewner_suite(&cfg.loewner, seed)?,
        Suite::Modulus => modulus_suite(&cfg.loewner, seed)?,
        Suite::Uniformization => uniformization_suite(&cfg.uniformization, seed)?,
        Suite::Tau0 => tau0_suite(&cfg.tau0, seed)?,
        Suite::Order => order_suite(&cfg.order, seed)?,
        Suite::Disk => disk_suite(&cfg.disk, seed)?,
        Suite::MatingVariance => mating_variance_suite(&cfg.mating_variance, seed)?,
        Suite::MatingPpp => ppp_suite(&cfg.mating_ppp, seed)?,
        Suite::Ledger => ledger_suite(&cfg.ledger, seed)?,
        Suite::Burgers => burgers_suite(&cfg.burgers, seed)?,
        Suite::Calibration => calibration_suite(&cfg.calibration, seed)?
            .into_iter()
            .map(|r| {
                check(format!("calibration/{}", r.test), r.failures as f64 / r.runs as f64, Some(r.rate_interval), r.runs, r.pass, seed)
            })
            .collect(),
    };
    Ok(SuiteReport::new(suite, seed, checks))
}

/// A Brownian driver `sqrt(kappa) B` on the grid.
pub fn brownian_driver(kappa: f64, step: f64, horizon: f64, seed: u64) -> Result<DrivingProcess> {
    let mut rng = trial_rng(seed, 0);
    let m = (horizon / step).round() as usize;
    let sd = (kappa * step).sqrt();
    let mut a = 0.0;
    let angles = (0..m)
        .map(|_| {
            let x = a;
            a += sd * rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect();
    DrivingProcess::new(step, angles)
}

fn loewner_suite(s: &LoewnerSuite, seed: u64) -> Result<Vec<TestReport>> {
    let errs: Vec<Result<f64>> = map_trials(s.drivers, |i| {
        let d = brownian_driver(s.kappa, s.step, s.horizon, child_seed(seed, i as u64))?;
        let chain = solve_radial_loewner(&d, &[], s.horizon)?;
        Ok(chain.center_log_deriv.iter().enumerate().map(|(k, &l)| (l - k as f64 * s.step).abs()).fold(0.0, f64::max))
    });
    let worst = errs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    Ok(vec![check("sup |log g'(0) - t|", worst, None, s.drivers, worst < s.tol, seed)])
}

fn modulus_suite(s: &LoewnerSuite, seed: u64) -> Result<Vec<TestReport>> {
    let per: Vec<Result<(usize, usize)>> = map_trials(s.drivers, |i| {
        let sd = child_seed(seed, i as u64);
        let d = brownian_driver(s.kappa, s.step, s.horizon, sd)?;
        let mut rng = trial_rng(sd, 1);
        let pts: Vec<C> = (0..s.points).map(|_| C::from_polar(rng.random::<f64>().sqrt() * 0.99, rng.random::<f64>() * TAU)).collect();
        let chain = solve_radial_loewner(&d, &pts, s.horizon)?;
        let (mut steps, mut bad) = (0, 0);
        for p in &chain.points {
            for w in p.trajectory.windows(2) {
                steps += 1;
                bad += usize::from(w[1].norm() < w[0].norm() - s.modulus_tol);
            }
        }
        Ok((steps, bad))
    });
    let (mut steps, mut bad) = (0, 0);
    for r in per {
        let (a, b) = r?;
        steps += a;
        bad += b;
    }
    Ok(vec![check("modulus decreases", bad as f64, None, steps, bad == 0, seed)])
}

fn uniformization_suite(s: &UniformizationSuite, seed: u64) -> Result<Vec<TestReport>> {
    let mut out = Vec::new();
    let mut mags = Vec::new();
    for (j, &eps) in s.epsilons.iter().enumerate() {
        let kp = kappa_prime_from_eps(eps);
        let base = child_seed(seed, j as u64);
        let angles: Vec<f64> =
            map_trials(s.samples, |i| first_excursion_root_angle(kp, s.n, s.step, s.reflect_tol, child_seed(base, i as u64)))
                .into_iter()
                .collect::<Result<_>>()?;
        let m = empirical_cf(&angles, 1.0)?.norm();
        mags.push(m);
        out.push(check(format!("|cf(1)| at eps = {eps}"), m, None, s.samples, true, seed));
    }
    let decreasing = mags.windows(2).all(|w| w[1] < w[0]);
    out.push(check("|cf| strictly decreasing", f64::from(u8::from(decreasing)), None, mags.len(), decreasing, seed));
    let last = mags.last().copied().unwrap_or(f64::NAN);
    out.push(check("|cf| at smallest eps below threshold", last, None, s.samples, last < s.max_cf, seed));
    Ok(out)
}

fn tau0_samples(n: i32, s: &Tau0Suite, seed: u64) -> Result<Vec<f64>> {
    map_trials(s.samples, |i| Ok(uniform_cle4_driving(n, s.t_max, s.step, child_seed(seed, i as u64))?.0.cut_duration()))
        .into_iter()
        .collect()
}

fn tau0_suite(s: &Tau0Suite, seed: u64) -> Result<Vec<TestReport>> {
    // the same seeds at both thresholds: the finer cut refines the coarse one path by path
    let a = tau0_samples(s.coarse_n, s, seed)?;
    let b = tau0_samples(s.fine_n, s, seed)?;
    let d = ks_statistic(&a, &b)?;
    Ok(vec![check(format!("KS(tau0^{}, tau0^{})", s.coarse_n, s.fine_n), d, None, s.samples, d < s.max_ks, seed)])
}

fn two_point_order(kp: f64, s: &OrderSuite, seed: u64) -> Result<(u64, u64)> {
    let targets = [C::new(s.radius, 0.0), C::new(-s.radius, 0.0)];
    let res: Vec<Option<u8>> = map_trials(s.trials, |i| {
        explore_branching_with(kp, &targets, child_seed(seed, i as u64), s.horizon, &s.exploration)
            .ok()
            .and_then(|e| order_from_colors(&e, 0, 1).ok())
    });
    let used: Vec<u8> = res.into_iter().flatten().collect();
    Ok((used.iter().map(|&v| u64::from(v)).sum(), used.len() as u64))
}

fn order_suite(s: &OrderSuite, seed: u64) -> Result<Vec<TestReport>> {
    let bad: Vec<Result<Option<bool>>> = map_trials(s.sets, |i| {
        let sd = child_seed(seed, i as u64);
        let mut rng = trial_rng(sd, 7);
        let t: Vec<C> =
            (0..s.targets_per_set).map(|_| C::from_polar(rng.random::<f64>().sqrt() * 0.9, rng.random::<f64>() * TAU)).collect();
        let order = explore_branching_with(4.0, &t, sd, s.horizon, &s.exploration).and_then(|exp| assign_order_variables(&exp, sd));
        match order {
            Ok(o) => Ok(Some(o.transitivity_violation().is_some())),
            Err(SimError::NotSeparated) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let (mut violations, mut checked) = (0, 0);
    for b in bad {
        if let Some(v) = b? {
            checked += 1;
            violations += usize::from(v);
        }
    }
    let mut out = vec![check("kappa' = 4 transitivity violations", violations as f64, None, checked, violations == 0 && checked > 0, seed)];
    let (k_near, n_near) = two_point_order(s.kappa_near, s, child_seed(seed, 1))?;
    let (k_far, n_far) = two_point_order(s.kappa_far, s, child_seed(seed, 2))?;
    if n_near == 0 || n_far == 0 {
        return Err(SimError::SampleTooSmall("no resolved colour orders".into()));
    }
    let p_near = k_near as f64 / n_near as f64;
    let p_far = k_far as f64 / n_far as f64;
    let in_band = (s.band[0]..=s.band[1]).contains(&p_near);
    out.push(check(
        format!("P(O = 1) at kappa' = {}", s.kappa_near),
        p_near,
        Some(wilson_interval(k_near, n_near, 1.96)),
        n_near as usize,
        in_band,
        seed,
    ));
    let closer = (p_near - 0.5).abs() < (p_far - 0.5).abs();
    out.push(check(format!("closer to 1/2 than kappa' = {} ({p_far:.4})", s.kappa_far), p_near - 0.5, None, n_far as usize, closer, seed));
    Ok(out)
}

fn disk_suite(s: &DiskSuite, seed: u64) -> Result<Vec<TestReport>> {
    // critical draws whose boundary length never reaches 1 under any shift cannot be normalized;
    // they are rejected and replaced by fresh draws
    let (mut samples, mut rejected, mut next) = (Vec::with_capacity(s.samples), 0usize, 0usize);
    while samples.len() < s.samples {
        let want = s.samples - samples.len();
        let batch = map_trials(want, |i| {
            sample_quantum_disk(s.gamma, &s.disk, child_seed(seed, (next + i) as u64)).map(|d| (d.boundary_length, d.raw_boundary_length))
        });
        next += want;
        for r in batch {
            match r {
                Ok(v) => samples.push(v),
                Err(SimError::DegenerateSample(_)) => rejected += 1,
                Err(e) => return Err(e),
            }
        }
        if rejected > s.samples {
            return Err(SimError::SampleTooSmall(format!("{rejected} degenerate disk draws")));
        }
    }
    let worst = samples.iter().map(|&(b, _)| (b - 1.0).abs()).fold(0.0, f64::max);
    let raw: Vec<f64> = samples.iter().map(|&(_, r)| r).collect();
    let fit = tail_exponent_fit(&raw, s.tail_decades, child_seed(seed, u64::MAX))?;
    Ok(vec![
        check("max |nu(boundary) - 1|", worst, None, s.samples, worst < s.norm_tol, seed),
        check("boundary-mass tail exponent", fit.exponent, Some(fit.ci), fit.n, fit.exponent >= s.min_exponent, seed),
        check("rejected unnormalizable draws", rejected as f64, None, next, true, seed),
    ])
}

fn mating_variance_suite(s: &MatingVarianceSuite, seed: u64) -> Result<Vec<TestReport>> {
    let mut out = Vec::new();
    for (j, &gamma) in s.gammas.iter().enumerate() {
        let eps = 2.0 - gamma;
        let base = child_seed(seed, j as u64);
        let v: Vec<f64> =
            map_trials(s.paths, |i| sample_free_path(eps, s.duration, s.step, child_seed(base, i as u64)).map(|p| p.realized_variance()))
                .into_iter()
                .collect::<Result<_>>()?;
        let ratio = v.iter().sum::<f64>() / v.len() as f64 / increment_variance(eps);
        out.push(check(format!("variance ratio at gamma = {gamma}"), ratio, None, s.paths, (ratio - 1.0).abs() < s.rel_tol, seed));
        if eps > 0.0 {
            let a = a_eps(eps);
            let mut worst: f64 = 0.0;
            for i in 0..s.anchor_samples {
                let z = sample_cone_excursion(eps, 0.0, child_seed(base, (s.paths + i) as u64), &s.cone)?;
                let x = cone_transform(&z)?;
                let (x0, y0) = x.start();
                worst = worst.max((x0 - a).abs()).max((y0 - 1.0).abs());
            }
            out.push(check(format!("start = (a_eps, 1) at gamma = {gamma}"), worst, None, s.anchor_samples, worst < 1e-12, seed));
        }
    }
    Ok(out)
}

fn ppp_suite(s: &PppSuite, seed: u64) -> Result<Vec<TestReport>> {
    s.gammas
        .iter()
        .enumerate()
        .map(|(j, &gamma)| {
            let est = estimate_ppp_exponent(2.0 - gamma, s.paths, child_seed(seed, j as u64), &s.ppp)?;
            let ok = (est.alpha_hat - est.target).abs() <= s.tol;
            Ok(check(
                format!("alpha at gamma = {gamma} (target {:.4})", est.target),
                est.alpha_hat,
                Some(est.ci),
                est.n_excursions,
                ok,
                seed,
            ))
        })
        .collect()
}

fn ledger_suite(s: &LedgerSuite, seed: u64) -> Result<Vec<TestReport>> {
    let per: Vec<Result<(crate::mating::JumpLedger, f64)>> = map_trials(s.paths, |i| {
        let sd = child_seed(seed, i as u64);
        let path = sample_half_plane_excursion(sd, s.step)?;
        // reference time uniform on the excursion, like t_z for a point drawn from area measure
        let t_ref = trial_rng(sd, 1).random::<f64>() * path.duration();
        let set = ancestor_free_times(&path, t_ref)?;
        Ok((local_time_and_jumps(&set, &path, &s.ledger)?, path.step()))
    });
    // very long excursions hit the sample cap and cannot resolve three bands; they are skipped
    let mut ledgers = Vec::new();
    for r in per {
        match r {
            Ok(l) => ledgers.push(l),
            Err(SimError::Resolution { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if ledgers.is_empty() {
        return Err(SimError::SampleTooSmall("no excursion resolved three bands".into()));
    }
    let (res, tv): (f64, f64) = ledgers.iter().fold((0.0, 0.0), |(r, t), (l, _)| (r + l.residual().abs(), t + l.total_variation()));
    let residual = res / tv;
    let worst_time = ledgers.iter().map(|(l, h)| (l.accounted_time() - l.reference_time).abs() / h).fold(0.0, f64::max);
    // pool exact local time and delta N_delta per band over the paths that resolve it
    let mut pooled: Vec<(f64, f64, f64)> = Vec::new();
    for (l, _) in &ledgers {
        let Some(ell) = l.exact_local_time else { continue };
        for b in &l.bands {
            match pooled.iter_mut().find(|p| (p.0 - b.delta).abs() <= 1e-12 * b.delta) {
                Some(p) => {
                    p.1 += ell;
                    p.2 += b.delta * b.count as f64;
                }
                None => pooled.push((b.delta, ell, b.delta * b.count as f64)),
            }
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let finest: Vec<f64> = pooled.iter().rev().take(3).map(|p| p.1 / p.2).collect();
    let spread = if finest.len() == 3 {
        let (lo, hi) = finest.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        hi / lo - 1.0
    } else {
        f64::INFINITY
    };
    Ok(vec![
        check("pooled |residual| / total variation", residual, None, ledgers.len(), residual < s.max_residual, seed),
        check("duration conservation (grid steps)", worst_time, None, ledgers.len(), worst_time <= s.max_time_steps, seed),
        check(
            "local-time constant spread over finest three bands",
            spread,
            Some([finest.iter().copied().fold(f64::INFINITY, f64::min), finest.iter().copied().fold(0.0, f64::max)]),
            ledgers.len(),
            spread < s.max_c_spread,
            seed,
        ),
    ])
}

fn burgers_suite(s: &BurgersSuite, seed: u64) -> Result<Vec<TestReport>> {
    s.ps.iter()
        .enumerate()
        .map(|(j, &p)| {
            let est = scaling_estimates(p, s.n, s.trials, child_seed(seed, j as u64))?;
            Ok(check(
                format!("alpha at p = {p} (target {:.3})", est.alpha_target),
                est.alpha_hat,
                None,
                s.trials,
                (est.alpha_hat - est.alpha_target).abs() <= s.tol,
                seed,
            ))
        })
        .collect()
}
