//! Radial Loewner flow with a piecewise-constant driving function.
//!
//! `g_t` solves `dg/dt = g (W + g) / (W - g)` with `g_0 = id`, so `g_t'(0) = e^t`.
//! Points are integrated together with `lambda = log g_t'(z)`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::batch::map_trials;
use crate::error::{Result, SimError};

type C = Complex64;

/// Driving function `W_t = e^{i angle}` sampled at `t_k = k * step`, held constant on `[t_k, t_k + step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingProcess {
    pub step: f64,
    pub angles: Vec<f64>,
}

/// Signed angle difference wrapped to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

impl DrivingProcess {
    pub fn new(step: f64, angles: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(SimError::InvalidDriving(format!("step {step}")));
        }
        if let Some(k) = angles.iter().position(|a| !a.is_finite()) {
            return Err(SimError::InvalidDriving(format!("non-finite angle at sample {k}")));
        }
        Ok(Self { step, angles: angles.into_iter().map(|a| a.rem_euclid(TAU)).collect() })
    }

    /// Constant driver at `angle` over `[0, duration]`.
    pub fn constant(angle: f64, step: f64, duration: f64) -> Result<Self> {
        let m = (duration / step).round() as usize;
        Self::new(step, vec![angle; m])
    }

    /// The identity chain's driver: no samples, zero duration.
    pub fn empty(step: f64) -> Self {
        Self { step, angles: Vec::new() }
    }

    pub fn duration(&self) -> f64 {
        self.angles.len() as f64 * self.step
    }

    /// Sample pairs `(t_k, angle_k)`.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.angles.iter().enumerate().map(move |(k, &a)| (k as f64 * self.step, a))
    }

    /// Number of whole steps covering `[0, t]`.
    pub fn steps_to(&self, t: f64) -> usize {
        ((t / self.step).round() as usize).min(self.angles.len())
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        let k = ((t / self.step).floor() as usize).min(self.angles.len().saturating_sub(1));
        self.angles[k]
    }

    pub fn concat(&self, other: &DrivingProcess) -> Result<DrivingProcess> {
        if self.angles.is_empty() {
            return Ok(other.clone());
        }
        if other.angles.is_empty() {
            return Ok(self.clone());
        }
        if (self.step - other.step).abs() > 1e-12 * self.step {
            return Err(SimError::InvalidDriving(format!("step mismatch {} vs {}", self.step, other.step)));
        }
        let mut angles = self.angles.clone();
        angles.extend_from_slice(&other.angles);
        Ok(DrivingProcess { step: self.step, angles })
    }

    /// Driver restricted to `[0, t]`.
    pub fn truncated(&self, t: f64) -> DrivingProcess {
        DrivingProcess { step: self.step, angles: self.angles[..self.steps_to(t)].to_vec() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::InvalidDriving(format!("step {}", self.step)));
        }
        match self.angles.iter().position(|a| !a.is_finite()) {
            Some(k) => Err(SimError::InvalidDriving(format!("non-finite angle at sample {k}"))),
            None => Ok(()),
        }
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoewnerConfig {
    /// A point is swallowed once `|g_t(z) - W_t|` drops below this.
    pub swallow_tol: f64,
    /// Substeps are capped at `substep_factor * |W - g|^2`.
    pub substep_factor: f64,
    /// Below `implicit_factor * step` from the driver the integrator is implicit midpoint.
    pub implicit_factor: f64,
    pub min_substep: f64,
    pub max_substeps: usize,
    /// Points with `1 - |z|` below this are treated as boundary points.
    pub boundary_eps: f64,
}

impl Default for LoewnerConfig {
    fn default() -> Self {
        Self {
            swallow_tol: 1e-5,
            substep_factor: 0.05,
            implicit_factor: 10.0,
            min_substep: 1e-15,
            max_substeps: 1_000_000,
            boundary_eps: 1e-12,
        }
    }
}

#[inline]
fn field(g: C, w: C) -> (C, C) {
    let d = w - g;
    (g * (w + g) / d, (w * w + 2.0 * w * g - g * g) / (d * d))
}

/// `d zeta/dt` and `d lambda/dt` in the log-distance variable `zeta = log(W - g)`.
#[inline]
fn field_log(zeta: C, w: C) -> (C, C) {
    let em = (-zeta).exp();
    let em2 = em * em;
    (-2.0 * w * w * em2 + 3.0 * w * em - 1.0, 2.0 * w * w * em2 - 1.0)
}

/// State of one tracked point under the forward flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    pub g: C,
    pub lambda: C,
    pub swallowed_at: Option<f64>,
    /// Last substep modulus decrease beyond round-off, for monotonicity audits.
    pub max_modulus_drop: f64,
    boundary: bool,
}

impl FlowState {
    pub fn new(z: C, cfg: &LoewnerConfig) -> Self {
        Self { g: z, lambda: C::new(0.0, 0.0), swallowed_at: None, max_modulus_drop: 0.0, boundary: 1.0 - z.norm() < cfg.boundary_eps }
    }

    pub fn is_swallowed(&self) -> bool {
        self.swallowed_at.is_some()
    }

    /// Check the initial position against the driver at time `t`.
    pub fn check_contact(&mut self, xi: f64, t: f64, cfg: &LoewnerConfig) {
        if self.swallowed_at.is_none() && (self.g - C::from_polar(1.0, xi)).norm() < cfg.swallow_tol {
            self.swallowed_at = Some(t);
        }
    }

    /// Flow over `[t, t + h]` with the driver fixed at angle `xi`.
    /// `step` is the driver grid spacing used to pick the integration regime.
    pub fn advance(&mut self, xi: f64, h: f64, t: f64, step: f64, cfg: &LoewnerConfig, id: usize) -> Result<()> {
        if self.swallowed_at.is_some() || h <= 0.0 {
            return Ok(());
        }
        let w = C::from_polar(1.0, xi);
        if self.boundary {
            return self.advance_boundary(w, h, t, cfg);
        }
        let mut elapsed = 0.0;
        let mut count = 0usize;
        while elapsed < h {
            count += 1;
            let d = (w - self.g).norm();
            if d < cfg.swallow_tol {
                self.swallowed_at = Some(t + elapsed);
                return Ok(());
            }
            let hs = (h - elapsed).min(cfg.substep_factor * d * d);
            if hs < cfg.min_substep || count > cfg.max_substeps {
                return Err(SimError::SwallowResolution { point: id, time: t + elapsed });
            }
            let before = self.g.norm();
            if d >= 0.25 {
                self.rk4_direct(w, hs);
            } else if d >= cfg.implicit_factor * step {
                self.rk4_log(w, hs);
            } else {
                self.implicit_midpoint_log(w, hs);
            }
            if !self.g.re.is_finite() || !self.g.im.is_finite() {
                return Err(SimError::SwallowResolution { point: id, time: t + elapsed });
            }
            let drop = before - self.g.norm();
            if drop > self.max_modulus_drop {
                self.max_modulus_drop = drop;
            }
            elapsed += hs;
        }
        if (w - self.g).norm() < cfg.swallow_tol {
            self.swallowed_at = Some(t + h);
        }
        Ok(())
    }

    fn rk4_direct(&mut self, w: C, h: f64) {
        let g = self.g;
        let (k1, l1) = field(g, w);
        let (k2, l2) = field(g + 0.5 * h * k1, w);
        let (k3, l3) = field(g + 0.5 * h * k2, w);
        let (k4, l4) = field(g + h * k3, w);
        self.g = g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        self.lambda += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }

    fn rk4_log(&mut self, w: C, h: f64) {
        let z = (w - self.g).ln();
        let (k1, l1) = field_log(z, w);
        let (k2, l2) = field_log(z + 0.5 * h * k1, w);
        let (k3, l3) = field_log(z + 0.5 * h * k2, w);
        let (k4, l4) = field_log(z + h * k3, w);
        let z1 = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        self.g = w - z1.exp();
        self.lambda += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }

    fn implicit_midpoint_log(&mut self, w: C, h: f64) {
        let z0 = (w - self.g).ln();
        let mut z1 = z0 + h * field_log(z0, w).0;
        for _ in 0..8 {
            let mid = 0.5 * (z0 + z1);
            let em = (-mid).exp();
            let f = -2.0 * w * w * em * em + 3.0 * w * em - 1.0;
            let df = 4.0 * w * w * em * em - 3.0 * w * em;
            let res = z1 - z0 - h * f;
            let delta = res / (1.0 - 0.5 * h * df);
            z1 -= delta;
            if delta.norm() < 1e-14 {
                break;
            }
        }
        let mid = 0.5 * (z0 + z1);
        self.lambda += h * field_log(mid, w).1;
        self.g = w - z1.exp();
    }

    /// Boundary points move on the circle: with `psi` the angle from the driver,
    /// `cos(psi / 2)` decays like `e^{-t/2}` exactly.
    fn advance_boundary(&mut self, w: C, h: f64, t: f64, cfg: &LoewnerConfig) -> Result<()> {
        let xi = w.arg();
        let psi0 = (self.g.arg() - xi).rem_euclid(TAU);
        if psi0 < 1e-15 || (self.g - w).norm() < cfg.swallow_tol {
            self.swallowed_at = Some(t);
            return Ok(());
        }
        let psi_at = |s: f64| 2.0 * ((psi0 / 2.0).cos() * (-s / 2.0).exp()).clamp(-1.0, 1.0).acos();
        let g_at = |s: f64| w * C::from_polar(1.0, psi_at(s));
        let l = |s: f64| field(g_at(s), w).1;
        self.lambda += h / 6.0 * (l(0.0) + 4.0 * l(0.5 * h) + l(h));
        self.g = g_at(h);
        Ok(())
    }

    /// Crossing rule at a driver jump from `xi` to `xi_next` at time `t`: a point whose
    /// argument lies strictly inside the swept arc and whose distance to the circle is below
    /// half the jump is swallowed, as a continuous driver would have hit it.
    pub fn check_crossing(&mut self, xi: f64, xi_next: f64, t: f64) {
        if self.swallowed_at.is_some() {
            return;
        }
        let jump = wrap_angle(xi_next - xi);
        if jump == 0.0 || self.g.norm() == 0.0 {
            return;
        }
        let a = wrap_angle(self.g.arg() - xi);
        let inside = if jump > 0.0 { a > 0.0 && a < jump } else { a < 0.0 && a > jump };
        if inside && 1.0 - self.g.norm() < 0.5 * jump.abs() {
            self.swallowed_at = Some(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub id: usize,
    pub z0: C,
    /// `g_t(z)` at every grid time up to the horizon, frozen after swallowing.
    pub trajectory: Vec<C>,
    /// `log g_t'(z)` on the same grid.
    pub log_deriv: Vec<C>,
    pub swallow_time: Option<f64>,
    pub max_modulus_drop: f64,
}

/// A radial Loewner chain on `[0, horizon]` with its tracked points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainChain {
    pub driving: DrivingProcess,
    pub points: Vec<TrackedPoint>,
    /// `log |g_t'(0)|` at every grid time.
    pub center_log_deriv: Vec<f64>,
    pub horizon: f64,
}

/// Advance a point through driver samples `k0..k1`, applying the crossing rule at every jump.
pub fn flow_through(
    state: &mut FlowState,
    driving: &DrivingProcess,
    k0: usize,
    k1: usize,
    cfg: &LoewnerConfig,
    id: usize,
    mut record: impl FnMut(usize, &FlowState),
) -> Result<()> {
    let h = driving.step;
    for k in k0..k1 {
        let t = k as f64 * h;
        if k == 0 {
            state.check_contact(driving.angles[0], 0.0, cfg);
        }
        state.advance(driving.angles[k], h, t, h, cfg, id)?;
        if let Some(&next) = driving.angles.get(k + 1) {
            state.check_crossing(driving.angles[k], next, t + h);
        }
        record(k + 1, state);
    }
    Ok(())
}

pub fn solve_radial_loewner(driving: &DrivingProcess, tracked: &[C], t_max: f64) -> Result<DomainChain> {
    solve_radial_loewner_with(driving, tracked, t_max, &LoewnerConfig::default())
}

/// Integrate the chain on `[0, t_max]`, tracking `g_t(z)` and `log g_t'(z)` for each point.
pub fn solve_radial_loewner_with(driving: &DrivingProcess, tracked: &[C], t_max: f64, cfg: &LoewnerConfig) -> Result<DomainChain> {
    driving.validate()?;
    if t_max > driving.duration() + 1e-9 * driving.step {
        return Err(SimError::InvalidParameter(format!("t_max {t_max} exceeds driver duration {}", driving.duration())));
    }
    if let Some(z) = tracked.iter().find(|z| z.norm() > 1.0 + 1e-12) {
        return Err(SimError::InvalidParameter(format!("tracked point {z} outside the closed disk")));
    }
    let m = driving.steps_to(t_max);
    let points = map_trials(tracked.len(), |id| -> Result<TrackedPoint> {
        let z0 = tracked[id];
        let mut st = FlowState::new(z0, cfg);
        if m == 0 {
            st.check_contact(driving.angles.first().copied().unwrap_or(0.0), 0.0, cfg);
        }
        let mut trajectory = Vec::with_capacity(m + 1);
        let mut log_deriv = Vec::with_capacity(m + 1);
        trajectory.push(z0);
        log_deriv.push(C::new(0.0, 0.0));
        flow_through(&mut st, driving, 0, m, cfg, id, |_, s| {
            trajectory.push(s.g);
            log_deriv.push(s.lambda);
        })?;
        Ok(TrackedPoint { id, z0, trajectory, log_deriv, swallow_time: st.swallowed_at, max_modulus_drop: st.max_modulus_drop })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut center = FlowState::new(C::new(0.0, 0.0), cfg);
    let mut center_log_deriv = Vec::with_capacity(m + 1);
    center_log_deriv.push(0.0);
    flow_through(&mut center, driving, 0, m, cfg, usize::MAX, |_, s| center_log_deriv.push(s.lambda.re))?;

    Ok(DomainChain { driving: driving.truncated(m as f64 * driving.step), points, center_log_deriv, horizon: m as f64 * driving.step })
}

/// Conformal radius of the domain at time `t` seen from 0, read off the tracked derivative.
pub fn conformal_radius(chain: &DomainChain, t: f64) -> Result<f64> {
    if t > chain.horizon + 1e-12 || t < 0.0 {
        return Err(SimError::InvalidParameter(format!("t = {t} outside [0, {}]", chain.horizon)));
    }
    let k = ((t / chain.driving.step).round() as usize).min(chain.center_log_deriv.len() - 1);
    Ok((-chain.center_log_deriv[k]).exp())
}

/// Evaluate `g_t(w)` and `g_t'(w)` by the forward flow; `None` if `w` is swallowed by time `t`.
pub fn forward_map(driving: &DrivingProcess, w: C, t: f64, cfg: &LoewnerConfig) -> Result<Option<(C, C)>> {
    let m = driving.steps_to(t);
    let mut st = FlowState::new(w, cfg);
    flow_through(&mut st, driving, 0, m, cfg, 0, |_, _| {})?;
    Ok((!st.is_swallowed()).then(|| (st.g, st.lambda.exp())))
}

/// `f_t(z) = g_t^{-1}(z)` by integrating the time-reversed flow from `z`.
/// The reversed flow pushes points into the disk, so it has no singularity.
fn backward_flow(driving: &DrivingProcess, z: C, m: usize, cfg: &LoewnerConfig) -> C {
    let h = driving.step;
    let mut p = z;
    for k in (0..m).rev() {
        let w = C::from_polar(1.0, driving.angles[k]);
        let mut elapsed = 0.0;
        while elapsed < h {
            let d = (w - p).norm().max(1e-300);
            let hs = (h - elapsed).min(cfg.substep_factor * d * d).max(1e-16);
            let f = |q: C| -field(q, w).0;
            let k1 = f(p);
            let k2 = f(p + 0.5 * hs * k1);
            let k3 = f(p + 0.5 * hs * k2);
            let k4 = f(p + hs * k3);
            p += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            elapsed += hs;
        }
    }
    p
}

/// `f_t(z)` with optional Newton polishing against the forward map.
pub fn inverse_map(driving: &DrivingProcess, z: C, t: f64, polish: bool, cfg: &LoewnerConfig) -> Result<C> {
    let m = driving.steps_to(t);
    let mut w = backward_flow(driving, z, m, cfg);
    if !polish {
        return Ok(w);
    }
    let fail = || SimError::Inversion { re: z.re, im: z.im, time: t };
    for _ in 0..8 {
        let (g, dg) = forward_map(driving, w, t, cfg)?.ok_or_else(fail)?;
        let r = g - z;
        if r.norm() < 1e-11 {
            return Ok(w);
        }
        w -= r / dg;
        if !(w.norm() < 1.0) {
            return Err(fail());
        }
    }
    match forward_map(driving, w, t, cfg)? {
        Some((g, _)) if (g - z).norm() < 1e-7 => Ok(w),
        _ => Err(fail()),
    }
}

/// Sampling grid for the Caratheodory-type distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaratheodoryGrid {
    pub n_times: usize,
    pub n_radii: usize,
    pub n_angles: usize,
    pub polish: bool,
}

impl Default for CaratheodoryGrid {
    fn default() -> Self {
        Self { n_times: 8, n_radii: 4, n_angles: 16, polish: true }
    }
}

/// `sup_{t <= t_max} sup_{z in r D} |f^a_t(z) - f^b_t(z)|` over the sample grid.
pub fn caratheodory_distance(a: &DomainChain, b: &DomainChain, r: f64, t_max: f64, grid: &CaratheodoryGrid) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(SimError::InvalidParameter(format!("radius {r} outside (0,1)")));
    }
    if t_max > a.horizon + 1e-9 || t_max > b.horizon + 1e-9 {
        return Err(SimError::InvalidParameter("t_max beyond a chain horizon".into()));
    }
    let cfg = LoewnerConfig::default();
    let mut zs = vec![C::new(0.0, 0.0)];
    for i in 1..=grid.n_radii {
        for j in 0..grid.n_angles {
            zs.push(C::from_polar(r * i as f64 / grid.n_radii as f64, TAU * j as f64 / grid.n_angles as f64));
        }
    }
    let jobs: Vec<(f64, C)> = (1..=grid.n_times)
        .flat_map(|i| {
            let t = t_max * i as f64 / grid.n_times as f64;
            zs.iter().map(move |&z| (t, z))
        })
        .collect();
    let diffs = map_trials(jobs.len(), |j| -> Result<f64> {
        let (t, z) = jobs[j];
        let fa = inverse_map(&a.driving, z, t, grid.polish, &cfg)?;
        let fb = inverse_map(&b.driving, z, t, grid.polish, &cfg)?;
        Ok((fa - fb).norm())
    });
    diffs.into_iter().try_fold(0.0f64, |acc, d| Ok(acc.max(d?)))
}

/// Compose bubble maps given as Loewner drivers, in chronological order.
///
/// The resulting chain is driven by the concatenated drivers, so its map at the
/// horizon is `f_1 o f_2 o ... o f_n` and `-log f'(0)` adds up.
pub fn compose_bubble_maps(bubbles: &[DrivingProcess]) -> Result<DomainChain> {
    let cfg = LoewnerConfig::default();
    let mut total = DrivingProcess::empty(bubbles.first().map_or(1e-3, |b| b.step));
    for b in bubbles {
        b.validate()?;
        let mut center = FlowState::new(C::new(0.0, 0.0), &cfg);
        flow_through(&mut center, b, 0, b.angles.len(), &cfg, 0, |_, _| {})?;
        let fprime = (-center.lambda.re).exp();
        if fprime >= 1.0 {
            return Err(SimError::NotContractive(fprime));
        }
        total = total.concat(b)?;
    }
    let horizon = total.duration();
    solve_radial_loewner_with(&total, &[], horizon, &cfg)
}

/// CSV with columns `time,point_id,re,im,swallowed_flag`.
pub fn write_chain_csv<W: Write>(chain: &DomainChain, mut out: W) -> std::io::Result<()> {
    writeln!(out, "time,point_id,re,im,swallowed_flag")?;
    let h = chain.driving.step;
    for p in &chain.points {
        for (k, g) in p.trajectory.iter().enumerate() {
            let t = k as f64 * h;
            let flag = p.swallow_time.is_some_and(|s| s <= t + 1e-12);
            writeln!(out, "{t},{},{},{},{}", p.id, g.re, g.im, u8::from(flag))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn identity_at_time_zero() {
        let d = DrivingProcess::constant(0.0, 1e-3, 1.0).unwrap();
        let zs = [C::new(0.3, 0.1), C::new(-0.5, 0.2)];
        let ch = solve_radial_loewner(&d, &zs, 0.0).unwrap();
        for (p, z) in ch.points.iter().zip(zs) {
            assert_eq!(p.trajectory, vec![z]);
        }
        assert_eq!(conformal_radius(&ch, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn derivative_at_center_is_exponential() {
        let d = DrivingProcess::constant(0.0, 1e-3, 1.0).unwrap();
        let ch = solve_radial_loewner(&d, &[C::new(0.0, 0.0)], 1.0).unwrap();
        let k = 500;
        assert!((ch.points[0].log_deriv[k].exp().norm() - 0.5f64.exp()).abs() < 1e-4);
        assert!((conformal_radius(&ch, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn point_at_driver_is_swallowed_immediately() {
        let d = DrivingProcess::constant(0.0, 1e-3, 0.1).unwrap();
        let ch = solve_radial_loewner(&d, &[C::new(1.0, 0.0)], 0.1).unwrap();
        assert_eq!(ch.points[0].swallow_time, Some(0.0));
    }

    #[test]
    fn non_finite_driver_rejected() {
        let d = DrivingProcess { step: 1e-3, angles: vec![0.0, f64::NAN] };
        assert!(matches!(solve_radial_loewner(&d, &[], 2e-3), Err(SimError::InvalidDriving(_))));
        assert!(DrivingProcess::new(1e-3, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let angles: Vec<f64> = (0..400).map(|k| (k as f64 * 0.01).sin()).collect();
        let d = DrivingProcess::new(1e-3, angles).unwrap();
        let cfg = LoewnerConfig::default();
        let z = C::new(0.2, -0.4);
        let w = inverse_map(&d, z, 0.4, true, &cfg).unwrap();
        let (g, _) = forward_map(&d, w, 0.4, &cfg).unwrap().unwrap();
        assert!((g - z).norm() < 1e-9);
    }

    #[test]
    fn compose_examples() {
        let id = compose_bubble_maps(&[]).unwrap();
        assert_eq!(id.horizon, 0.0);
        let one = compose_bubble_maps(&[DrivingProcess::constant(1.0, 1e-3, 0.3).unwrap()]).unwrap();
        assert!((one.horizon - 0.3).abs() < 1e-12);
        let a = DrivingProcess::constant(1.0, 1e-3, 0.3).unwrap();
        let b = DrivingProcess::constant(2.5, 1e-3, 0.45).unwrap();
        let two = compose_bubble_maps(&[a, b]).unwrap();
        assert!((two.horizon - 0.75).abs() < 1e-6);
        assert!((two.center_log_deriv.last().unwrap() - 0.75).abs() < 1e-6);
        assert!(matches!(compose_bubble_maps(&[DrivingProcess::empty(1e-3)]), Err(SimError::NotContractive(_))));
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let d = DrivingProcess::constant(0.0, 0.1, 0.2).unwrap();
        let ch = solve_radial_loewner(&d, &[C::new(0.1, 0.0)], 0.2).unwrap();
        let mut buf = Vec::new();
        write_chain_csv(&ch, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("time,point_id,re,im,swallowed_flag\n"));
        assert_eq!(s.lines().count(), 1 + 3);
    }
}
