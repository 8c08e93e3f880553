//! Brownian cone and half-plane excursions, ancestor-free times, local time and jump ledgers,
//! growth-fragmentation cells.
//!
//! Conventions: `epsilon = 2 - gamma`, cone angle `theta = pi gamma^2 / 4`. The uncorrelated pair
//! `X = (A, B)` has per-coordinate variance [`increment_variance`] per unit time and relates to the
//! correlated cone pair `Z = (L, R)` by `A = a (L + R)`, `B = R - L`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{child_seed, map_trials, trial_rng};
use crate::error::{Result, SimError};
use crate::stats::{tail_exponent_fit_window, TailFit};

pub fn cone_angle(epsilon: f64) -> f64 {
    PI * (2.0 - epsilon).powi(2) / 4.0
}

/// `a_eps = sqrt((1 + cos theta) / (1 - cos theta))`.
pub fn a_eps(epsilon: f64) -> f64 {
    let c = cone_angle(epsilon).cos();
    ((1.0 + c) / (1.0 - c)).max(0.0).sqrt()
}

/// Per-unit-time variance of each coordinate of `X`.
pub fn increment_variance(epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        return PI;
    }
    let th = cone_angle(epsilon);
    2.0 * (1.0 + th.cos()) / (epsilon * th.sin())
}

/// Per-unit-time variance of `L` and `R`, and their correlation.
pub fn cone_covariance(epsilon: f64) -> (f64, f64) {
    let th = cone_angle(epsilon);
    (1.0 / (epsilon * th.sin()), -th.cos())
}

/// Target exponent of the cone-excursion duration intensity.
pub fn ppp_exponent_target(epsilon: f64) -> f64 {
    1.0 + 2.0 / (2.0 - epsilon).powi(2)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..2.0 - 2f64.sqrt()).contains(&epsilon) {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(format!("epsilon = {epsilon} outside [0, 2 - sqrt 2)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// `(L, R)` coordinates.
    Cone,
    /// `(A, B)` coordinates.
    HalfPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPath {
    pub epsilon: f64,
    pub frame: Frame,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Per-unit-time variance of each `X` coordinate.
    pub variance: f64,
}

impl PlanarPath {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn start(&self) -> (f64, f64) {
        (self.x[0], self.y[0])
    }

    pub fn end(&self) -> (f64, f64) {
        (*self.x.last().unwrap(), *self.y.last().unwrap())
    }

    pub fn duration(&self) -> f64 {
        self.t.last().unwrap() - self.t[0]
    }

    /// Mean grid spacing.
    pub fn step(&self) -> f64 {
        self.duration() / (self.len() - 1) as f64
    }

    /// Grid index of time `t` (rounded down).
    pub fn index_of(&self, t: f64) -> usize {
        self.t.partition_point(|&s| s <= t + 1e-12 * self.step()).saturating_sub(1)
    }

    /// Sum of squared increments over both coordinates divided by `2 * duration`.
    pub fn realized_variance(&self) -> f64 {
        let qv: f64 = self.x.windows(2).zip(self.y.windows(2)).map(|(a, b)| (a[1] - a[0]).powi(2) + (b[1] - b[0]).powi(2)).sum();
        qv / (2.0 * self.duration())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,y")?;
        for k in 0..self.len() {
            writeln!(out, "{},{},{}", self.t[k], self.x[k], self.y[k])?;
        }
        Ok(())
    }
}

/// Unconditioned `X` path started at the origin.
pub fn sample_free_path(epsilon: f64, duration: f64, step: f64, seed: u64) -> Result<PlanarPath> {
    check_epsilon(epsilon)?;
    let n = (duration / step).round() as usize;
    if n < 2 {
        return Err(SimError::InvalidParameter(format!("duration {duration} / step {step} gives {n} steps")));
    }
    let variance = increment_variance(epsilon);
    let sd = (variance * step).sqrt();
    let mut rng = trial_rng(seed, 0);
    let (mut x, mut y) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
    let (mut a, mut b) = (0.0, 0.0);
    x.push(a);
    y.push(b);
    for _ in 0..n {
        a += sd * rng.sample::<f64, _>(StandardNormal);
        b += sd * rng.sample::<f64, _>(StandardNormal);
        x.push(a);
        y.push(b);
    }
    let t = (0..=n).map(|k| k as f64 * step).collect();
    Ok(PlanarPath { epsilon, frame: Frame::HalfPlane, t, x, y, variance })
}

/// Unconditioned correlated `Z` path started at the origin (requires `epsilon > 0`).
pub fn sample_free_cone_path(epsilon: f64, duration: f64, step: f64, seed: u64) -> Result<PlanarPath> {
    if epsilon <= 0.0 {
        return Err(SimError::InvalidParameter("cone frame needs epsilon > 0".into()));
    }
    let x = sample_free_path(epsilon, duration, step, seed)?;
    Ok(to_cone(&x))
}

fn to_cone(x: &PlanarPath) -> PlanarPath {
    let a = a_eps(x.epsilon);
    let l = x.x.iter().zip(&x.y).map(|(p, q)| (p / a - q) / 2.0).collect();
    let r = x.x.iter().zip(&x.y).map(|(p, q)| (p / a + q) / 2.0).collect();
    PlanarPath { frame: Frame::Cone, x: l, y: r, ..x.clone() }
}

/// Longest grid used by the half-plane sampler; longer durations get a coarser step.
pub const MAX_EXCURSION_SAMPLES: usize = 1 << 21;

fn brownian_bridge<R: Rng>(n: usize, dt: f64, sd_per_step: f64, rng: &mut R) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    let mut s = 0.0;
    w.push(0.0);
    for _ in 0..n {
        s += sd_per_step * rng.sample::<f64, _>(StandardNormal);
        w.push(s);
    }
    let end = w[n];
    let total = n as f64 * dt;
    for (k, v) in w.iter_mut().enumerate() {
        *v -= k as f64 * dt / total * end;
    }
    w
}

/// Duration of the half-plane excursion from `(0, 1)` to the origin: `1 / (2 pi E)`, `E ~ Exp(1)`.
pub fn sample_half_plane_duration<R: Rng>(rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    1.0 / (2.0 * PI * e)
}

/// Half-plane excursion `X = (A, B)` from `(0, 1)` to `(0, 0)` with variance pi per unit time.
///
/// `A` is the modulus of a three-dimensional Brownian bridge and `B` an independent bridge.
pub fn sample_half_plane_excursion(seed: u64, step: f64) -> Result<PlanarPath> {
    if !(step > 0.0) {
        return Err(SimError::InvalidParameter(format!("step {step}")));
    }
    let mut rng = trial_rng(seed, 0);
    let duration = sample_half_plane_duration(&mut rng);
    let n = ((duration / step).ceil() as usize).clamp(2, MAX_EXCURSION_SAMPLES);
    let dt = duration / n as f64;
    let sd = (PI * dt).sqrt();
    let b1 = brownian_bridge(n, dt, sd, &mut rng);
    let b2 = brownian_bridge(n, dt, sd, &mut rng);
    let b3 = brownian_bridge(n, dt, sd, &mut rng);
    let by = brownian_bridge(n, dt, sd, &mut rng);
    let x: Vec<f64> = (0..=n).map(|k| (b1[k] * b1[k] + b2[k] * b2[k] + b3[k] * b3[k]).sqrt()).collect();
    let y: Vec<f64> = (0..=n).map(|k| 1.0 - k as f64 / n as f64 + by[k]).collect();
    let t = (0..=n).map(|k| k as f64 * dt).collect();
    let mut path = PlanarPath { epsilon: 0.0, frame: Frame::HalfPlane, t, x, y, variance: PI };
    path.x[n] = 0.0;
    path.y[n] = 0.0;
    Ok(path)
}

/// Duration of a planar Brownian motion (variance pi) from `(delta, 1)` killed on hitting the
/// imaginary axis, conditioned to hit it within `delta` of the origin. Rejection sampling.
pub fn strip_conditioned_duration(delta: f64, seed: u64) -> f64 {
    let mut rng = trial_rng(seed, 0);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let tau = delta * delta / (PI * z * z);
        let n: f64 = rng.sample(StandardNormal);
        if (1.0 + (PI * tau).sqrt() * n).abs() < delta {
            return tau;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeSamplerConfig {
    pub step: f64,
    pub window: f64,
    pub max_retries: usize,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for ConeSamplerConfig {
    fn default() -> Self {
        Self { step: 1e-4, window: 16.0, max_retries: 4, min_height: 1.0, max_height: 2.0 }
    }
}

/// Cone excursion `Z = (L, R)` from `(0, 1)` to the origin.
///
/// Simulates `X` on a window ending at time 0, takes the maximal cone excursions relative to the
/// window end, and returns the most recent one that starts on the `L` side, lasts at least
/// `min_duration` and has starting height in `[min_height, max_height]`, Brownian-rescaled to unit height.
/// The window doubles on each retry.
pub fn sample_cone_excursion(epsilon: f64, min_duration: f64, seed: u64, cfg: &ConeSamplerConfig) -> Result<PlanarPath> {
    if epsilon <= 0.0 {
        return Err(SimError::InvalidParameter("cone excursions need epsilon > 0".into()));
    }
    let a = a_eps(epsilon);
    let mut window = cfg.window;
    for attempt in 0..=cfg.max_retries {
        let x = sample_free_path(epsilon, window, cfg.step, child_seed(seed, attempt as u64))?;
        let (u, v) = dominance_coords(&x);
        let m = x.len() - 1;
        let free = ancestor_free_mask(&u, &v, m);
        for (s, e) in covered_runs(&free).1.into_iter().rev() {
            let duration = (e - s) as f64 * cfg.step;
            // the excursion starts at s + 1; the crossing happened on the L side
            if duration < min_duration || u[s] >= u[e] {
                continue;
            }
            let h = x.y[s + 1] - x.y[e];
            if !(cfg.min_height..=cfg.max_height).contains(&h) {
                continue;
            }
            let (xe, ye) = (x.x[e], x.y[e]);
            let n = e - s - 1;
            let t: Vec<f64> = (0..=n).map(|k| k as f64 * cfg.step / (h * h)).collect();
            let mut l = Vec::with_capacity(n + 1);
            let mut r = Vec::with_capacity(n + 1);
            for k in s + 1..=e {
                let (p, q) = ((x.x[k] - xe) / h, (x.y[k] - ye) / h);
                l.push((p / a - q) / 2.0);
                r.push((p / a + q) / 2.0);
            }
            l[0] = 0.0;
            r[0] = 1.0;
            return Ok(PlanarPath { epsilon, frame: Frame::Cone, t, x: l, y: r, variance: x.variance });
        }
        window *= 2.0;
    }
    Err(SimError::WindowExhausted(cfg.max_retries))
}

/// `A = a (L + R)`, `B = R - L`.
pub fn cone_transform(z: &PlanarPath) -> Result<PlanarPath> {
    if z.frame != Frame::Cone {
        return Err(SimError::InvalidParameter("cone_transform expects an (L, R) path".into()));
    }
    let a = a_eps(z.epsilon);
    let x = z.x.iter().zip(&z.y).map(|(l, r)| a * (l + r)).collect();
    let y = z.x.iter().zip(&z.y).map(|(l, r)| r - l).collect();
    Ok(PlanarPath { frame: Frame::HalfPlane, x, y, ..z.clone() })
}

/// Coordinates whose joint dominance defines cone excursions: `(L, R)` up to a positive factor.
/// At `epsilon = 0` both equal `A`.
fn dominance_coords(p: &PlanarPath) -> (Vec<f64>, Vec<f64>) {
    match p.frame {
        Frame::Cone => (p.x.clone(), p.y.clone()),
        Frame::HalfPlane => {
            let a = a_eps(p.epsilon);
            let u = p.x.iter().zip(&p.y).map(|(x, y)| x - a * y).collect();
            let v = p.x.iter().zip(&p.y).map(|(x, y)| x + a * y).collect();
            (u, v)
        }
    }
}

/// Free mask on `0..=m`. For every `j`, the maximal cone excursion ending at `j` starts right after
/// the last index where either coordinate is strictly below its value at `j`; its interior is covered.
fn ancestor_free_mask(u: &[f64], v: &[f64], m: usize) -> Vec<bool> {
    let mut diff = vec![0i64; m + 2];
    let (mut su, mut sv): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for j in 0..=m {
        while su.last().is_some_and(|&k| u[k] >= u[j]) {
            su.pop();
        }
        while sv.last().is_some_and(|&k| v[k] >= v[j]) {
            sv.pop();
        }
        let b = su.last().copied().max(sv.last().copied());
        if let Some(b) = b {
            if b + 1 < j {
                diff[b + 1] += 1;
                diff[j] -= 1;
            }
        }
        su.push(j);
        sv.push(j);
    }
    let mut free = Vec::with_capacity(m + 1);
    let mut acc = 0;
    for d in &diff[..=m] {
        acc += d;
        free.push(acc == 0);
    }
    free
}

/// Free mask on `0..=m`: `A_s <= min A` over `[s, m]`.
fn backward_infimum_mask(a: &[f64], m: usize) -> Vec<bool> {
    let mut free = vec![false; m + 1];
    let mut running = f64::INFINITY;
    for s in (0..=m).rev() {
        if a[s] <= running {
            free[s] = true;
            running = a[s];
        }
    }
    free
}

fn free_mask(path: &PlanarPath, m: usize) -> Vec<bool> {
    if path.epsilon == 0.0 && path.frame == Frame::HalfPlane {
        backward_infimum_mask(&path.x, m)
    } else {
        let (u, v) = dominance_coords(path);
        ancestor_free_mask(&u, &v, m)
    }
}

/// `(s, e)` pairs: free indices bracketing each maximal covered run. A covered run at the start
/// has no left bracket and is reported by its length instead.
fn covered_runs(free: &[bool]) -> (usize, Vec<(usize, usize)>) {
    let leading = free.iter().take_while(|&&f| !f).count();
    let mut runs = Vec::new();
    let mut k = leading;
    while k < free.len() {
        if free[k] {
            k += 1;
            continue;
        }
        let s = k - 1;
        while !free[k] {
            k += 1;
        }
        runs.push((s, k));
    }
    (leading, runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Free grid index before the run.
    pub start_index: usize,
    /// Free grid index after the run.
    pub end_index: usize,
    pub start_time: f64,
    pub end_time: f64,
    /// `y[end] - y[start]`.
    pub displacement: f64,
    /// Covered grid points times the step.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncestorFreeSet {
    pub reference_time: f64,
    pub reference_index: usize,
    pub step: f64,
    pub free: Vec<bool>,
    pub intervals: Vec<[f64; 2]>,
    pub gaps: Vec<Gap>,
    /// Duration of a covered run at time 0 (possible only at `epsilon = 0` when `A_0` is not minimal).
    pub leading_covered: f64,
}

impl AncestorFreeSet {
    /// Grid measure of the free set.
    pub fn free_measure(&self) -> f64 {
        self.free.iter().filter(|&&f| f).count() as f64 * self.step
    }
}

/// Times in `[0, t_ref]` not covered by a cone excursion inside `[0, t_ref]`. At `epsilon = 0`, the
/// backward running infimum times of `A` relative to `t_ref`.
pub fn ancestor_free_times(path: &PlanarPath, t_ref: f64) -> Result<AncestorFreeSet> {
    if t_ref > path.t.last().copied().unwrap_or(0.0) + 1e-9 || t_ref < 0.0 {
        return Err(SimError::InvalidParameter(format!("reference time {t_ref} outside the path")));
    }
    let m = path.index_of(t_ref);
    let free = free_mask(path, m);
    let step = path.step();
    let (leading, runs) = covered_runs(&free);
    let gaps = runs
        .iter()
        .map(|&(s, e)| Gap {
            start_index: s,
            end_index: e,
            start_time: path.t[s],
            end_time: path.t[e],
            displacement: path.y[e] - path.y[s],
            duration: (e - s - 1) as f64 * step,
        })
        .collect();
    let mut intervals = Vec::new();
    let mut k = 0;
    while k <= m {
        if !free[k] {
            k += 1;
            continue;
        }
        let s = k;
        while k < m && free[k + 1] {
            k += 1;
        }
        intervals.push([path.t[s], path.t[k]]);
        k += 1;
    }
    Ok(AncestorFreeSet {
        reference_time: path.t[m],
        reference_index: m,
        step,
        free,
        intervals,
        gaps,
        leading_covered: leading as f64 * step,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerConfig {
    /// Local-time constant `c` in `l = c * delta * N_delta`.
    pub c: f64,
    /// A band `(delta/2, delta]` is resolvable when `delta / 2 >= resolution_factor * sigma * sqrt(dt)`.
    pub resolution_factor: f64,
    pub end_tol: f64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { c: PI / 2.0, resolution_factor: 8.0, end_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCount {
    pub delta: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub local_time: f64,
    pub magnitude: f64,
    pub sign: i8,
    pub duration: f64,
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpLedger {
    pub reference_time: f64,
    /// Jumps in order of local time, accumulated backward from the reference time.
    pub jumps: Vec<Jump>,
    /// `(real time, local time)` steps: local time accumulated on `[real time, reference time]`.
    pub local_time_profile: Vec<(f64, f64)>,
    /// Resolvable dyadic bands, coarsest first.
    pub bands: Vec<BandCount>,
    pub c: f64,
    pub local_time: f64,
    /// `A_t - min A` at `epsilon = 0`.
    pub exact_local_time: Option<f64>,
    pub ties: usize,
    pub tie_duration: f64,
    pub leading_covered: f64,
    pub free_measure: f64,
    pub b_start: f64,
    pub b_end: f64,
    /// Sum of `|B|` increments between adjacent free grid points.
    pub free_variation: f64,
}

impl JumpLedger {
    pub fn finest_band(&self) -> &BandCount {
        self.bands.last().expect("ledger has at least three bands")
    }

    pub fn signed_sum(&self) -> f64 {
        self.jumps.iter().map(|j| j.sign as f64 * j.magnitude).sum()
    }

    /// `B_t - B_0 - sum of signed jumps`.
    pub fn residual(&self) -> f64 {
        self.b_end - self.b_start - self.signed_sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.jumps.iter().map(|j| j.magnitude).sum::<f64>() + self.free_variation
    }

    pub fn total_duration(&self) -> f64 {
        self.jumps.iter().map(|j| j.duration).sum()
    }

    /// Jump durations plus free measure plus everything not attributed to a jump; equals the reference time up to one step.
    pub fn accounted_time(&self) -> f64 {
        self.total_duration() + self.tie_duration + self.leading_covered + self.free_measure
    }

    /// `l / (delta N_delta)` per band, given a local time `l`.
    pub fn band_constants(&self, local_time: f64) -> Vec<f64> {
        self.bands.iter().map(|b| local_time / (b.delta * b.count as f64)).collect()
    }
}

/// Jump ledger of the gaps of `set` along `path`.
pub fn local_time_and_jumps(set: &AncestorFreeSet, path: &PlanarPath, cfg: &LedgerConfig) -> Result<JumpLedger> {
    let floor = 2.0 * cfg.resolution_factor * (path.variance * set.step).sqrt();
    let mut bands = Vec::new();
    let mut delta = 1.0f64;
    while delta >= floor {
        let count = set.gaps.iter().filter(|g| g.displacement.abs() > delta / 2.0 && g.displacement.abs() <= delta).count();
        bands.push(BandCount { delta, count });
        delta /= 2.0;
    }
    if bands.len() < 3 {
        return Err(SimError::Resolution { requested: 0.125, grid: floor });
    }
    let finest = bands.last().unwrap().delta;
    let unit = cfg.c * finest;

    let mut jumps = Vec::with_capacity(set.gaps.len());
    let mut profile = vec![(set.reference_time, 0.0)];
    let mut ties = 0;
    let mut tie_duration = 0.0;
    let mut counted = 0usize;
    for g in set.gaps.iter().rev() {
        let lt = unit * counted as f64;
        let mag = g.displacement.abs();
        if mag > finest / 2.0 && mag <= finest {
            counted += 1;
            profile.push((g.start_time, unit * counted as f64));
        }
        if mag < cfg.end_tol {
            ties += 1;
            tie_duration += g.duration;
            continue;
        }
        jumps.push(Jump {
            local_time: lt,
            magnitude: mag,
            sign: if g.displacement > 0.0 { 1 } else { -1 },
            duration: g.duration,
            start_time: g.start_time,
        });
    }
    let m = set.reference_index;
    let free_variation = (0..m).filter(|&k| set.free[k] && set.free[k + 1]).map(|k| (path.y[k + 1] - path.y[k]).abs()).sum();
    let exact_local_time = (path.epsilon == 0.0 && path.frame == Frame::HalfPlane)
        .then(|| path.x[m] - path.x[..=m].iter().copied().fold(f64::INFINITY, f64::min));
    Ok(JumpLedger {
        reference_time: set.reference_time,
        jumps,
        local_time_profile: profile,
        bands,
        c: cfg.c,
        local_time: unit * counted as f64,
        exact_local_time,
        ties,
        tie_duration,
        leading_covered: set.leading_covered,
        free_measure: set.free_measure(),
        b_start: path.y[0],
        b_end: path.y[m],
        free_variation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub start_time: f64,
    pub end_time: f64,
    pub mass: f64,
}

/// Excursions of the path strictly to the right of `x = level`, with crossing times and `y` values
/// linearly interpolated. Mass is `y_end - y_start`.
pub fn gf_cells(path: &PlanarPath, level: f64) -> Vec<Cell> {
    let n = path.len();
    let cross = |k: usize| {
        let w = (level - path.x[k]) / (path.x[k + 1] - path.x[k]);
        (path.t[k] + w * (path.t[k + 1] - path.t[k]), path.y[k] + w * (path.y[k + 1] - path.y[k]))
    };
    let mut cells = Vec::new();
    let mut open = (path.x[0] > level).then(|| (path.t[0], path.y[0]));
    for k in 0..n - 1 {
        let (above, next_above) = (path.x[k] > level, path.x[k + 1] > level);
        if !above && next_above {
            open = Some(cross(k));
        } else if above && !next_above {
            let (t1, y1) = if path.x[k + 1] == level { (path.t[k + 1], path.y[k + 1]) } else { cross(k) };
            if let Some((t0, y0)) = open.take() {
                cells.push(Cell { start_time: t0, end_time: t1, mass: y1 - y0 });
            }
        }
    }
    if let Some((t0, y0)) = open {
        cells.push(Cell { start_time: t0, end_time: path.t[n - 1], mass: path.y[n - 1] - y0 });
    }
    cells
}

pub fn gf_cell_masses(path: &PlanarPath, level: f64) -> Vec<f64> {
    gf_cells(path, level).into_iter().map(|c| c.mass).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PppConfig {
    pub duration: f64,
    pub step: f64,
    /// Lower end of the fit window in grid steps.
    pub window_steps: f64,
    pub window_decades: f64,
}

impl Default for PppConfig {
    fn default() -> Self {
        Self { duration: 8.0, step: 4e-5, window_steps: 25.0, window_decades: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PppEstimate {
    pub epsilon: f64,
    pub alpha_hat: f64,
    pub ci: [f64; 2],
    pub target: f64,
    pub n_excursions: usize,
    pub fit: TailFit,
}

/// Pool the gap durations of free paths and fit `alpha = 1 + survival exponent` over a two-decade window.
pub fn estimate_ppp_exponent(epsilon: f64, n_paths: usize, seed: u64, cfg: &PppConfig) -> Result<PppEstimate> {
    if n_paths < 1000 {
        return Err(SimError::SampleTooSmall(format!("{n_paths} paths, need at least 1000")));
    }
    check_epsilon(epsilon)?;
    let per_path: Vec<Result<Vec<f64>>> = map_trials(n_paths, |i| {
        let p = sample_free_path(epsilon, cfg.duration, cfg.step, child_seed(seed, i as u64))?;
        let set = ancestor_free_times(&p, p.duration())?;
        Ok(set.gaps.into_iter().map(|g| g.duration).filter(|&d| d > 0.0).collect())
    });
    let mut all = Vec::new();
    for r in per_path {
        all.extend(r?);
    }
    let lo = cfg.window_steps * cfg.step;
    let hi = lo * 10f64.powf(cfg.window_decades);
    let tail: Vec<f64> = all.into_iter().filter(|&d| d >= lo).collect();
    if tail.iter().filter(|&&d| d <= hi).count() < 1000 {
        return Err(SimError::SampleTooSmall(format!("{} excursions above {lo}", tail.len())));
    }
    let fit = tail_exponent_fit_window(&tail, lo, hi, child_seed(seed, u64::MAX))?;
    Ok(PppEstimate {
        epsilon,
        alpha_hat: 1.0 + fit.exponent,
        ci: [1.0 + fit.ci[0], 1.0 + fit.ci[1]],
        target: ppp_exponent_target(epsilon),
        n_excursions: tail.len(),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_from(x: Vec<f64>, y: Vec<f64>, epsilon: f64) -> PlanarPath {
        let t = (0..x.len()).map(|k| k as f64).collect();
        PlanarPath { epsilon, frame: Frame::HalfPlane, t, x, y, variance: PI }
    }

    #[test]
    fn anchor_formulas() {
        assert!((a_eps(2.0 - 2f64.sqrt()) - 1.0).abs() < 1e-12);
        assert!(a_eps(0.0) < 1e-7);
        assert!((increment_variance(1e-4) - PI).abs() < 1e-2);
        assert!((ppp_exponent_target(0.2) - (1.0 + 2.0 / 3.24)).abs() < 1e-12);
    }

    #[test]
    fn cone_covariance_transforms_to_x_variance() {
        for eps in [0.1, 0.3, 0.5] {
            let (c2, rho) = cone_covariance(eps);
            let a = a_eps(eps);
            let var_a = a * a * 2.0 * c2 * (1.0 + rho);
            let var_b = 2.0 * c2 * (1.0 - rho);
            assert!((var_a / increment_variance(eps) - 1.0).abs() < 1e-12);
            assert!((var_b / increment_variance(eps) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn strictly_increasing_a_is_all_free() {
        let p = path_from((0..50).map(|k| k as f64 * 0.1).collect(), vec![0.0; 50], 0.0);
        let s = ancestor_free_times(&p, 49.0).unwrap();
        assert!(s.free.iter().all(|&f| f));
        assert!(s.gaps.is_empty());
        assert_eq!(s.intervals, vec![[0.0, 49.0]]);
    }

    #[test]
    fn bump_is_excluded() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 3.2, 2.5, 3.5, 4.0];
        let p = path_from(x, vec![0.0, 0.0, 1.0, 2.0, 1.5, 0.5, 0.5, 0.0], 0.0);
        let s = ancestor_free_times(&p, 7.0).unwrap();
        assert_eq!(s.free, vec![true, true, true, false, false, true, true, true]);
        assert_eq!(s.gaps.len(), 1);
        assert_eq!((s.gaps[0].start_index, s.gaps[0].end_index), (2, 5));
        assert_eq!(s.gaps[0].displacement, -0.5);
        assert_eq!(s.gaps[0].duration, 2.0);
        assert_eq!(s.intervals, vec![[0.0, 2.0], [5.0, 7.0]]);
    }

    #[test]
    fn dominance_rule_agrees_with_backward_infimum_on_excursions() {
        for seed in 0..20 {
            let p = sample_half_plane_excursion(seed, 1e-4).unwrap();
            let m = p.len() / 2;
            assert_eq!(ancestor_free_mask(&p.x, &p.x, m), backward_infimum_mask(&p.x, m), "seed {seed}");
        }
    }

    #[test]
    fn free_path_leading_run_is_accounted() {
        let p = sample_free_path(0.0, 1.0, 1e-4, 3).unwrap();
        let s = ancestor_free_times(&p, 1.0).unwrap();
        let covered: f64 = s.gaps.iter().map(|g| g.duration).sum();
        assert!((covered + s.leading_covered + s.free_measure() - (1.0 + s.step)).abs() < 1e-9);
    }

    #[test]
    fn half_plane_endpoints_and_positivity() {
        for seed in 0..20 {
            let p = sample_half_plane_excursion(seed, 1e-3).unwrap();
            assert_eq!(p.start(), (0.0, 1.0));
            assert_eq!(p.end(), (0.0, 0.0));
            assert!(p.x.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn cone_excursion_anchor_and_cone() {
        let cfg = ConeSamplerConfig { window: 8.0, ..Default::default() };
        let z = sample_cone_excursion(0.3, 0.01, 7, &cfg).unwrap();
        assert_eq!(z.start(), (0.0, 1.0));
        assert!(z.x.iter().zip(&z.y).all(|(l, r)| *l >= -1e-12 && *r >= -1e-12));
        let x = cone_transform(&z).unwrap();
        assert_eq!(x.start(), (a_eps(0.3), 1.0));
        let (ea, eb) = x.end();
        assert!(ea.abs() < 1e-12 && eb.abs() < 1e-12);
        assert!(cone_transform(&x).is_err());
    }

    #[test]
    fn window_exhaustion_reported() {
        let cfg = ConeSamplerConfig { window: 0.01, max_retries: 1, ..Default::default() };
        assert!(matches!(sample_cone_excursion(0.3, 0.5, 1, &cfg), Err(SimError::WindowExhausted(1))));
    }

    #[test]
    fn gf_cells_examples() {
        let p = sample_half_plane_excursion(3, 1e-3).unwrap();
        let max = p.x.iter().copied().fold(0.0, f64::max);
        assert!(gf_cell_masses(&p, max).is_empty());
        let whole = gf_cell_masses(&p, 0.0);
        assert_eq!(whole.len(), 1);
        assert!((whole[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gf_cells_interpolate_crossings() {
        let p = path_from(vec![0.0, 2.0, 2.0, 0.0], vec![0.0, 2.0, 4.0, 6.0], 0.0);
        let c = gf_cells(&p, 1.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].start_time - 0.5).abs() < 1e-12 && (c[0].end_time - 2.5).abs() < 1e-12);
        assert!((c[0].mass - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ledger_conserves_duration() {
        let p = sample_half_plane_excursion(11, 1e-5).unwrap();
        let set = ancestor_free_times(&p, p.duration() / 2.0).unwrap();
        let led = local_time_and_jumps(&set, &p, &LedgerConfig::default()).unwrap();
        let total = led.accounted_time();
        assert!((total - set.reference_time).abs() <= 2.0 * set.step, "{total} vs {}", set.reference_time);
        assert!(led.jumps.windows(2).all(|w| w[0].local_time <= w[1].local_time));
    }

    #[test]
    fn coarse_grid_gives_resolution_error() {
        let p = sample_half_plane_excursion(2, 0.05).unwrap();
        let set = ancestor_free_times(&p, p.duration() / 2.0).unwrap();
        assert!(matches!(local_time_and_jumps(&set, &p, &LedgerConfig::default()), Err(SimError::Resolution { .. })));
    }
}
