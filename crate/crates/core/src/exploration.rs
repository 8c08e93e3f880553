//! Branching exploration toward a finite set of targets.
//!
//! One trunk is run toward the lowest-index target of a node. Targets that the trunk cuts off are
//! grouped by the grid step and side at which they are swallowed; each group continues in its own
//! node, whose disk is the pre-swallow domain recentred by a Möbius map at the group's lowest
//! index target. Every target carries a clock `-log CR(target; domain)` in the original disk.
//!
//! Within a node the trunk is a sequence of levels. Each level restarts theta at 0 and ends when
//! theta reaches 2 pi, which closes a loop around the node's lead target; consecutive nesting levels
//! are traced with opposite orientation.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{child_seed, trial_rng};
use crate::error::{Result, SimError};
use crate::loewner::{inverse_map, solve_radial_loewner_with, wrap_angle, DomainChain, DrivingProcess, FlowState, LoewnerConfig};
use crate::radial_sle::{simulate_theta, uniform_cle4_from, ThetaParams};

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub step: f64,
    pub reflect_tol: f64,
    /// kappa' = 4: excursions of theta below `2^-cut_exponent` are dropped.
    pub cut_exponent: i32,
    /// kappa' = 4: length of theta path simulated per level before cutting.
    pub theta_window: f64,
    pub max_levels: usize,
    /// A cut with the own-colour arc shorter than this but no recorded force-point crossing is ambiguous.
    pub color_margin: f64,
    /// When false a node stops as soon as all its targets are separated, so no further loops are traced.
    pub loops: bool,
    pub loewner: LoewnerConfig,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            reflect_tol: 1e-2,
            cut_exponent: 6,
            theta_window: 400.0,
            max_levels: 16,
            color_margin: 1e-3,
            loops: true,
            loewner: LoewnerConfig::default(),
        }
    }
}

/// `u -> rot (u - a) / (1 - conj(a) u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mobius {
    pub a: C,
    pub rot: C,
}

impl Mobius {
    /// The disk automorphism sending `a` to 0 and the boundary point `b` to 1.
    pub fn recentering(a: C, b: C) -> Self {
        let m = (b - a) / (C::new(1.0, 0.0) - a.conj() * b);
        Self { a, rot: m.conj() / m.norm() }
    }

    pub fn apply(&self, u: C) -> C {
        self.rot * (u - self.a) / (C::new(1.0, 0.0) - self.a.conj() * u)
    }

    pub fn inverse(&self, v: C) -> C {
        let w = v / self.rot;
        (w + self.a) / (C::new(1.0, 0.0) + self.a.conj() * w)
    }

    pub fn log_abs_derivative(&self, u: C) -> f64 {
        ((1.0 - self.a.norm_sqr()) / (C::new(1.0, 0.0) - self.a.conj() * u).norm_sqr()).ln()
    }
}

/// Which boundary arc at the tip a cut-off component hangs from: the arc running from the tip
/// to the force point along the curve's left side, or the complementary arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Red,
    Blue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// First grid index of the level in the node's clock.
    pub start_index: usize,
    pub angles: Vec<f64>,
    /// Theta at every grid index of the level, endpoint included.
    pub theta: Vec<f64>,
    /// Theta reflected at 0 in the step ending at this index (or sits within the reflection tolerance).
    pub zero_touch: Vec<bool>,
    pub clockwise: bool,
    /// Theta reached 2 pi before the horizon.
    pub complete: bool,
    /// Relative index at which the excursion that reaches the top starts.
    pub loop_start: usize,
    /// kappa' = 4: relative start index of each retained excursion.
    pub excursion_starts: Vec<usize>,
    pub end_angle: f64,
}

impl LevelRecord {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn end_index(&self) -> usize {
        self.start_index + self.angles.len()
    }

    fn sign(&self) -> f64 {
        if self.clockwise {
            -1.0
        } else {
            1.0
        }
    }

    /// Start angle and length of the arc of the given colour at relative index `r`.
    fn arc(&self, side: Side, r: usize) -> (f64, f64) {
        let xi = self.angles[r];
        let theta = self.theta[r].clamp(0.0, TAU);
        match (side, self.clockwise) {
            (Side::Red, false) => (xi - theta, theta),
            (Side::Blue, false) => (xi, TAU - theta),
            (Side::Red, true) => (xi, theta),
            (Side::Blue, true) => (xi - (TAU - theta), TAU - theta),
        }
    }

    fn side_of(&self, g: C, r: usize) -> Side {
        if wrap_angle(g.arg() - self.angles[r]) * self.sign() < 0.0 {
            Side::Red
        } else {
            Side::Blue
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationNode {
    pub id: usize,
    pub parent_event: Option<usize>,
    pub lead: usize,
    pub members: Vec<usize>,
    /// Map from the parent's pre-separation disk (the original disk at the root) onto this node's disk.
    pub frame: Mobius,
    /// Clock of the lead at the node's start.
    pub start_clock: f64,
    /// Member positions in the node's disk at its start, in `members` order.
    pub initial: Vec<C>,
    /// `log |Phi'|` of the map from the original disk for each member.
    pub log_scale: Vec<f64>,
    pub levels: Vec<LevelRecord>,
}

impl ExplorationNode {
    pub fn end_index(&self) -> usize {
        self.levels.last().map_or(0, LevelRecord::end_index)
    }

    /// The node's trunk driver over all its levels.
    pub fn driving(&self, step: f64) -> DrivingProcess {
        DrivingProcess { step, angles: self.levels.iter().flat_map(|l| l.angles.iter().copied()).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorVerdict {
    /// The cut-off component has a boundary of a single colour.
    pub swallowed_monochrome: bool,
    /// The driver jump that cut the component off also passed the force point.
    pub force_point_swallowed: bool,
    /// Length of the arc of the cut-off side's own colour just before the cut.
    pub own_arc: f64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationEvent {
    pub id: usize,
    pub node: usize,
    pub level: usize,
    /// Grid index in the node's clock at which the class is cut off.
    pub index: usize,
    pub class: Vec<usize>,
    /// Targets still in the lead's component just before the cut, other classes cut at the same index included.
    pub remaining: Vec<usize>,
    pub side: Side,
    /// The cut happened at the level's loop closure.
    pub closure: bool,
    pub child: usize,
    pub color: Option<ColorVerdict>,
    /// Three or more targets were cut off at this grid index; ordering follows the lowest index.
    pub tie_break: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationTime {
    pub from: usize,
    pub to: usize,
    /// Clock of `from`.
    pub time: f64,
    pub event: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LoopKind {
    /// Theta reached 2 pi in the target's node.
    Closure,
    /// kappa' = 4: the target was cut off inside a loop traced by an excursion.
    Excursion { event: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopTimes {
    pub target: usize,
    /// Nesting level, starting at 1.
    pub level: usize,
    /// `tau_{0,z}`: start of the excursion that traces the loop, in the target's clock.
    pub loop_start: f64,
    /// `tau_z`: the loop closes, in the target's clock.
    pub loop_end: f64,
    pub clockwise: bool,
    pub kind: LoopKind,
    /// Node and grid index where the bubble is the node's domain.
    pub node: usize,
    pub index: usize,
    /// Target position in that node's disk.
    pub center: C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingExploration {
    pub kappa_prime: f64,
    pub targets: Vec<C>,
    pub seed: u64,
    pub horizon: f64,
    pub config: ExplorationConfig,
    pub nodes: Vec<ExplorationNode>,
    pub events: Vec<SeparationEvent>,
    pub separation_times: Vec<SeparationTime>,
    pub loops: Vec<LoopTimes>,
    /// Nodes visited by each target's branch, root first.
    pub branches: Vec<Vec<usize>>,
    pub tie_warnings: usize,
}

impl BranchingExploration {
    /// `sigma_{z,w}` in the clock of `z`.
    pub fn separation_time(&self, z: usize, w: usize) -> Option<f64> {
        self.separation_times.iter().find(|s| s.from == z && s.to == w).map(|s| s.time)
    }

    /// The event at which `z` and `w` end up in different components.
    pub fn separating_event(&self, z: usize, w: usize) -> Option<&SeparationEvent> {
        self.separation_times.iter().find(|s| s.from == z && s.to == w).map(|s| &self.events[s.event])
    }

    pub fn loops_of(&self, target: usize) -> Vec<&LoopTimes> {
        let mut v: Vec<&LoopTimes> = self.loops.iter().filter(|l| l.target == target).collect();
        v.sort_by_key(|l| l.level);
        v
    }

    /// The trunk of a node as a Loewner chain, with its members tracked from their start positions.
    pub fn node_chain(&self, node: usize) -> Result<DomainChain> {
        let n = self.nodes.get(node).ok_or_else(|| SimError::InvalidParameter(format!("no node {node}")))?;
        let d = n.driving(self.config.step);
        let horizon = d.duration();
        solve_radial_loewner_with(&d, &n.initial, horizon, &self.config.loewner)
    }
}

enum LevelOutcome {
    Survived,
    /// Cut off at relative index `index`; `pre` is the last state before the cut.
    Separated {
        index: usize,
        side: Side,
        closure: bool,
        pre: FlowState,
    },
}

/// Harmonic measure seen from `z` of the arc of length `len` starting at angle `from` counterclockwise.
fn arc_measure(z: C, from: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if len >= TAU {
        return 1.0;
    }
    let a = C::from_polar(1.0, from);
    let b = C::from_polar(1.0, from + len);
    let phi = ((b - z) / (a - z)).arg().rem_euclid(TAU);
    ((2.0 * phi - len) / TAU).clamp(0.0, 1.0)
}

fn clock_of(s: &FlowState, log_scale: f64) -> f64 {
    log_scale + s.lambda.re - (1.0 - s.g.norm_sqr()).max(f64::MIN_POSITIVE).ln()
}

/// Flow one point through a level up to relative index `upto`, calling `on_state` at every index.
fn run_level(
    level: &LevelRecord,
    st: &mut FlowState,
    upto: usize,
    step: f64,
    cfg: &LoewnerConfig,
    id: usize,
    mut on_state: impl FnMut(usize, &FlowState),
) -> Result<LevelOutcome> {
    let m = level.len();
    let upto = upto.min(m);
    on_state(0, st);
    if m == 0 {
        return Ok(LevelOutcome::Survived);
    }
    st.check_contact(level.angles[0], 0.0, cfg);
    if st.is_swallowed() {
        return Ok(LevelOutcome::Separated { index: 0, side: level.side_of(st.g, 0), closure: false, pre: *st });
    }
    let mut prev = *st;
    for k in 0..upto {
        prev = *st;
        let t = k as f64 * step;
        st.advance(level.angles[k], step, t, step, cfg, id)?;
        if let Some(&next) = level.angles.get(k + 1) {
            // a fresh excursion root is a new bubble, not a sweep of the boundary
            if level.excursion_starts.binary_search(&(k + 1)).is_err() {
                st.check_crossing(level.angles[k], next, t + step);
            }
        }
        if st.is_swallowed() {
            let side = level.side_of(prev.g, k);
            let closure = level.complete && k + 1 == m && side == Side::Blue;
            return Ok(LevelOutcome::Separated { index: k + 1, side, closure, pre: prev });
        }
        on_state(k + 1, st);
    }
    if level.complete && upto == m {
        // theta reached 2 pi: whatever still sees mostly the collapsing arc lies outside the loop
        let (from, len) = level.arc(Side::Blue, m - 1);
        if arc_measure(prev.g, from, len) > 0.5 {
            return Ok(LevelOutcome::Separated { index: m, side: Side::Blue, closure: true, pre: prev });
        }
    }
    Ok(LevelOutcome::Survived)
}

/// Flow through the node's levels up to global index `upto`; the separation index is global.
fn run_node(node: &ExplorationNode, st: &mut FlowState, upto: usize, step: f64, cfg: &LoewnerConfig) -> Result<LevelOutcome> {
    for level in node.levels.iter().take_while(|l| l.start_index < upto) {
        let rel = upto - level.start_index;
        if let LevelOutcome::Separated { index, side, closure, pre } = run_level(level, st, rel, step, cfg, 0, |_, _| {})? {
            return Ok(LevelOutcome::Separated { index: level.start_index + index, side, closure, pre });
        }
    }
    Ok(LevelOutcome::Survived)
}

/// One level of SLE_{kappa'}(kappa' - 6) for kappa' > 4 with the force point carried by the same
/// piecewise-constant flow as every other boundary point.
///
/// Between grid times the force point moves by the exact boundary flow; the driver then jumps by
/// `sqrt(kappa' h) N + (kappa' - 6)/2 cot(theta/2) h`. A clockwise jump past the force point swallows
/// it (theta restarts at 0), a counterclockwise jump past it closes the loop around the target.
/// Colours read off this force point are consistent with the discrete hull.
fn sample_force_point_level(
    kappa_prime: f64,
    seed: u64,
    start_index: usize,
    root: f64,
    clockwise: bool,
    keep: usize,
    h: f64,
) -> LevelRecord {
    let mut rng = trial_rng(seed, 0);
    let sign = if clockwise { -1.0 } else { 1.0 };
    let sd = (kappa_prime * h).sqrt();
    let drift = (kappa_prime - 6.0) / 2.0;
    let decay = (-h / 2.0).exp();
    let (mut phase, mut theta) = (0.0f64, 0.0f64);
    let mut angles = Vec::with_capacity(keep.min(1 << 22));
    let mut thetas = vec![0.0];
    let mut zero_touch = vec![true];
    let mut loop_start = 0;
    let mut complete = false;
    for k in 0..keep {
        angles.push((root + sign * phase).rem_euclid(TAU));
        // the force point sits at angle 2 pi - theta counterclockwise from the driver
        let psi = TAU - theta;
        let flowed = TAU - 2.0 * ((psi / 2.0).cos() * decay).clamp(-1.0, 1.0).acos();
        let z: f64 = rng.sample(StandardNormal);
        let jump = sd * z + drift / (flowed / 2.0).tan() * h;
        phase += jump;
        let next = flowed + jump;
        if next >= TAU {
            complete = true;
            thetas.push(TAU);
            zero_touch.push(false);
            break;
        }
        let touched = next <= 0.0;
        theta = if touched { 0.0 } else { next };
        if touched {
            loop_start = k + 1;
        }
        thetas.push(theta);
        zero_touch.push(touched);
    }
    LevelRecord {
        start_index,
        angles,
        theta: thetas,
        zero_touch,
        clockwise,
        complete,
        loop_start,
        excursion_starts: Vec::new(),
        end_angle: (root + sign * phase).rem_euclid(TAU),
    }
}

struct Active {
    target: usize,
    state: FlowState,
    log_scale: f64,
}

struct Builder<'a> {
    kappa_prime: f64,
    seed: u64,
    horizon: f64,
    cfg: &'a ExplorationConfig,
    nodes: Vec<ExplorationNode>,
    events: Vec<SeparationEvent>,
    separation_times: Vec<SeparationTime>,
    loops: Vec<LoopTimes>,
    loop_count: Vec<usize>,
    branches: Vec<Vec<usize>>,
    tie_warnings: usize,
}

impl Builder<'_> {
    fn kappa_four(&self) -> bool {
        (self.kappa_prime - 4.0).abs() < 1e-12
    }

    fn sample_level(&self, seed: u64, start_index: usize, root: f64, clockwise: bool, remaining: f64) -> Result<LevelRecord> {
        let cfg = self.cfg;
        let h = cfg.step;
        let sign = if clockwise { -1.0 } else { 1.0 };
        let keep = (remaining / h).floor() as usize;
        if self.kappa_four() {
            let params = ThetaParams {
                kappa_prime: 4.0,
                x0: 0.0,
                t_max: cfg.theta_window,
                step: h,
                reflect_tol: cfg.reflect_tol,
                ..ThetaParams::default()
            };
            let path = simulate_theta(&params, seed)?;
            let (dec, _) = uniform_cle4_from(&path, cfg.cut_exponent, seed)?;
            let mut theta = Vec::with_capacity(dec.cut_driving.angles.len() + 1);
            let mut excursion_starts = Vec::with_capacity(dec.records.len());
            for rec in &dec.records {
                excursion_starts.push(theta.len());
                theta.extend_from_slice(&rec.values[..rec.values.len() - 1]);
            }
            theta.push(TAU);
            let mut zero_touch: Vec<bool> = theta.iter().map(|&v| v < cfg.reflect_tol).collect();
            let mut angles: Vec<f64> = dec.cut_driving.angles.iter().map(|a| (root + sign * a).rem_euclid(TAU)).collect();
            let complete = keep >= angles.len();
            angles.truncate(keep);
            theta.truncate(angles.len() + 1);
            zero_touch.truncate(angles.len() + 1);
            let end_angle = angles.last().copied().unwrap_or(root);
            Ok(LevelRecord {
                start_index,
                angles,
                theta,
                zero_touch,
                clockwise,
                complete,
                loop_start: (*excursion_starts.last().unwrap_or(&0)).min(keep),
                excursion_starts,
                end_angle,
            })
        } else {
            Ok(sample_force_point_level(self.kappa_prime, seed, start_index, root, clockwise, keep, h))
        }
    }

    fn new_node(&mut self, parent_event: Option<usize>, members: Vec<usize>, frame: Mobius, pre: &[(C, f64)]) -> usize {
        let id = self.nodes.len();
        let initial: Vec<C> = pre.iter().map(|&(g, _)| frame.apply(g)).collect();
        let log_scale: Vec<f64> = pre.iter().map(|&(g, s)| s + frame.log_abs_derivative(g)).collect();
        let lead = members[0];
        let start_clock = log_scale[0] - (1.0 - initial[0].norm_sqr()).ln();
        for &t in &members {
            self.branches[t].push(id);
        }
        self.nodes.push(ExplorationNode { id, parent_event, lead, members, frame, start_clock, initial, log_scale, levels: Vec::new() });
        id
    }

    /// Colour of the cut-off component. Its boundary image is the arc swept by the driver jump
    /// that swallowed it, so it is bicoloured exactly when that jump also passed the force point:
    /// theta reflecting at 0 on the red side, theta reaching 2 pi on the blue side.
    fn color_verdict(&self, level: &LevelRecord, side: Side, closure: bool, rel: usize) -> Option<ColorVerdict> {
        if self.kappa_four() {
            return None;
        }
        let r = rel.min(level.theta.len() - 1);
        let theta = level.theta[r.saturating_sub(1)];
        let (crossed, own_arc) = match side {
            Side::Red => (level.zero_touch[r], theta),
            Side::Blue => (closure, TAU - theta),
        };
        Some(ColorVerdict {
            swallowed_monochrome: !crossed,
            force_point_swallowed: crossed,
            own_arc,
            ambiguous: !crossed && own_arc < self.cfg.color_margin,
        })
    }

    fn process(&mut self, id: usize) -> Result<()> {
        let cfg = self.cfg;
        let h = cfg.step;
        let (lead, start_clock) = (self.nodes[id].lead, self.nodes[id].start_clock);
        let mut active: Vec<Active> = {
            let n = &self.nodes[id];
            (1..n.members.len())
                .map(|i| Active { target: n.members[i], state: FlowState::new(n.initial[i], &cfg.loewner), log_scale: n.log_scale[i] })
                .collect()
        };
        let mut k0 = 0usize;
        let mut root = 0.0;
        for l in 0..cfg.max_levels {
            let remaining = self.horizon - (start_clock + k0 as f64 * h);
            if remaining < h || (!cfg.loops && active.is_empty()) {
                break;
            }
            let clockwise = self.loop_count[lead] % 2 == 1;
            let level_seed = child_seed(child_seed(self.seed, id as u64), l as u64);
            let level = self.sample_level(level_seed, k0, root, clockwise, remaining)?;
            let m = level.len();

            // flow every member through the level and keep its clock at every index
            let mut cut: Vec<(usize, Side, bool, FlowState, usize)> = Vec::new();
            let mut clocks: Vec<Vec<f64>> = Vec::with_capacity(active.len());
            for (i, a) in active.iter_mut().enumerate() {
                let mut c = Vec::with_capacity(m + 1);
                let ls = a.log_scale;
                let out = run_level(&level, &mut a.state, m, h, &cfg.loewner, a.target, |_, s| c.push(clock_of(s, ls)))?;
                clocks.push(c);
                if let LevelOutcome::Separated { index, side, closure, pre } = out {
                    cut.push((index, side, closure, pre, i));
                }
            }
            cut.sort_by(|a, b| (a.0, a.1, active[a.4].target).cmp(&(b.0, b.1, active[b.4].target)));

            // group by (index, side)
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (j, c) in cut.iter().enumerate() {
                match groups.last_mut() {
                    Some(g) if cut[g[0]].0 == c.0 && cut[g[0]].1 == c.1 => g.push(j),
                    _ => groups.push(vec![j]),
                }
            }
            groups.sort_by_key(|g| (cut[g[0]].0, active[cut[g[0]].4].target));
            let mut gone = vec![false; active.len()];
            for g in &groups {
                let (index, side, closure) = (cut[g[0]].0, cut[g[0]].1, cut[g[0]].2);
                let class: Vec<usize> = g.iter().map(|&j| active[cut[j].4].target).collect();
                let same_index = cut.iter().filter(|c| c.0 == index).count();
                let tie_break = same_index >= 3;
                if tie_break {
                    self.tie_warnings += 1;
                }
                let remaining_ids: Vec<usize> = std::iter::once(lead)
                    .chain(active.iter().enumerate().filter(|&(i, _)| !gone[i] && !g.iter().any(|&j| cut[j].4 == i)).map(|(_, a)| a.target))
                    .collect();
                let event_id = self.events.len();
                let pre_index = index.saturating_sub(1);
                let clock_at = |i: usize| clocks[i].get(pre_index).copied().unwrap_or(f64::NAN);
                let lead_clock = start_clock + (k0 + pre_index) as f64 * h;
                for &j in g {
                    let xi = cut[j].4;
                    for &y in &remaining_ids {
                        let y_clock = if y == lead {
                            lead_clock
                        } else {
                            let yi = active.iter().position(|a| a.target == y).unwrap();
                            clock_at(yi)
                        };
                        self.separation_times.push(SeparationTime { from: active[xi].target, to: y, time: clock_at(xi), event: event_id });
                        self.separation_times.push(SeparationTime { from: y, to: active[xi].target, time: y_clock, event: event_id });
                    }
                }
                let color = self.color_verdict(&level, side, closure, index);
                let pre: Vec<(C, f64)> = g.iter().map(|&j| (cut[j].3.g, active[cut[j].4].log_scale + cut[j].3.lambda.re)).collect();
                let tip = C::from_polar(1.0, level.angles[pre_index.min(m - 1)]);
                let frame = Mobius::recentering(pre[0].0, tip);
                let child_id = self.nodes.len();
                self.events.push(SeparationEvent {
                    id: event_id,
                    node: id,
                    level: l,
                    index: k0 + index,
                    class: class.clone(),
                    remaining: remaining_ids,
                    side,
                    closure,
                    child: child_id,
                    color,
                    tie_break,
                });
                // at kappa' = 4 an ordinary cut means the class sits inside a loop traced by the current excursion
                if self.kappa_four() && !closure {
                    let ex = level.excursion_starts.iter().copied().filter(|&s| s <= pre_index).max().unwrap_or(0);
                    for &j in g {
                        let (xi, t) = (cut[j].4, active[cut[j].4].target);
                        self.loop_count[t] += 1;
                        self.loops.push(LoopTimes {
                            target: t,
                            level: self.loop_count[t],
                            loop_start: clocks[xi].get(ex).copied().unwrap_or(f64::NAN),
                            loop_end: clock_at(xi),
                            clockwise,
                            kind: LoopKind::Excursion { event: event_id },
                            node: child_id,
                            index: 0,
                            center: C::new(0.0, 0.0),
                        });
                    }
                }
                self.new_node(Some(event_id), class, frame, &pre);
                for &j in g {
                    gone[cut[j].4] = true;
                }
            }

            if level.complete {
                let end = k0 + m;
                for t in std::iter::once(lead).chain(active.iter().enumerate().filter(|&(i, _)| !gone[i]).map(|(_, a)| a.target)) {
                    self.loop_count[t] += 1;
                    let (start_clk, end_clk, center) = if t == lead {
                        (start_clock + (k0 + level.loop_start) as f64 * h, start_clock + end as f64 * h, C::new(0.0, 0.0))
                    } else {
                        let i = active.iter().position(|a| a.target == t).unwrap();
                        (clocks[i][level.loop_start], clocks[i][m], active[i].state.g)
                    };
                    self.loops.push(LoopTimes {
                        target: t,
                        level: self.loop_count[t],
                        loop_start: start_clk,
                        loop_end: end_clk,
                        clockwise,
                        kind: LoopKind::Closure,
                        node: id,
                        index: end,
                        center,
                    });
                }
            }
            let mut keep = gone.iter().map(|g| !g);
            active.retain(|_| keep.next().unwrap());
            root = level.end_angle;
            k0 += m;
            let complete = level.complete;
            self.nodes[id].levels.push(level);
            if !complete {
                break;
            }
        }
        Ok(())
    }
}

/// Explore toward `targets` until every branch's clock reaches `horizon`.
pub fn explore_branching(kappa_prime: f64, targets: &[C], seed: u64, horizon: f64) -> Result<BranchingExploration> {
    explore_branching_with(kappa_prime, targets, seed, horizon, &ExplorationConfig::default())
}

pub fn explore_branching_with(
    kappa_prime: f64,
    targets: &[C],
    seed: u64,
    horizon: f64,
    cfg: &ExplorationConfig,
) -> Result<BranchingExploration> {
    if !(4.0..8.0).contains(&kappa_prime) {
        return Err(SimError::InvalidParameter(format!("kappa' = {kappa_prime} outside [4, 8)")));
    }
    if targets.is_empty() {
        return Err(SimError::InvalidParameter("no targets".into()));
    }
    if let Some(z) = targets.iter().find(|z| !(z.norm() < 1.0)) {
        return Err(SimError::InvalidParameter(format!("target {z} not inside the unit disk")));
    }
    for i in 0..targets.len() {
        if targets[..i].contains(&targets[i]) {
            return Err(SimError::InvalidParameter(format!("duplicate target {}", targets[i])));
        }
    }
    if (kappa_prime - 4.0).abs() < 1e-12 && 2f64.powi(-cfg.cut_exponent) < cfg.reflect_tol {
        return Err(SimError::Resolution { requested: 2f64.powi(-cfg.cut_exponent), grid: cfg.reflect_tol });
    }
    let mut b = Builder {
        kappa_prime,
        seed,
        horizon,
        cfg,
        nodes: Vec::new(),
        events: Vec::new(),
        separation_times: Vec::new(),
        loops: Vec::new(),
        loop_count: vec![0; targets.len()],
        branches: vec![Vec::new(); targets.len()],
        tie_warnings: 0,
    };
    let frame = Mobius::recentering(targets[0], C::new(1.0, 0.0));
    let pre: Vec<(C, f64)> = targets.iter().map(|&z| (z, 0.0)).collect();
    b.new_node(None, (0..targets.len()).collect(), frame, &pre);
    let mut next = 0;
    while next < b.nodes.len() {
        b.process(next)?;
        next += 1;
    }
    Ok(BranchingExploration {
        kappa_prime,
        targets: targets.to_vec(),
        seed,
        horizon,
        config: cfg.clone(),
        nodes: b.nodes,
        events: b.events,
        separation_times: b.separation_times,
        loops: b.loops,
        branches: b.branches,
        tie_warnings: b.tie_warnings,
    })
}

/// Map a point of node `node`'s disk at grid index `index` back to the original disk.
pub fn to_original(exp: &BranchingExploration, node: usize, index: usize, v: C) -> Result<C> {
    let (mut node, mut index, mut p) = (node, index, v);
    loop {
        let n = &exp.nodes[node];
        let d = n.driving(exp.config.step);
        p = inverse_map(&d, p, index as f64 * exp.config.step, false, &exp.config.loewner)?;
        p = n.frame.inverse(p);
        match n.parent_event {
            Some(e) => {
                node = exp.events[e].node;
                index = exp.events[e].index.saturating_sub(1);
            }
            None => return Ok(p),
        }
    }
}

/// The bubble of a loop as a map from the unit disk, `0` going to the loop's target.
pub fn bubble_map(exp: &BranchingExploration, lp: &LoopTimes, v: C) -> Result<C> {
    let a = lp.center;
    let u = (v + a) / (C::new(1.0, 0.0) + a.conj() * v);
    to_original(exp, lp.node, lp.index, u)
}

/// `-log` of the conformal radius of the bubble seen from its target, from the composed maps.
///
/// This is an independent check on `lp.loop_end`, which carries the same quantity exactly. Bubbles much
/// smaller than `1e-12` collapse to a single point in double precision and give a resolution error.
pub fn bubble_log_conformal_radius(exp: &BranchingExploration, lp: &LoopTimes) -> Result<f64> {
    let eps = 1e-4;
    let hi = bubble_map(exp, lp, C::new(eps, 0.0))?;
    let lo = bubble_map(exp, lp, C::new(-eps, 0.0))?;
    let d = (hi - lo).norm() / (2.0 * eps);
    if !(d > 1e-12) {
        return Err(SimError::Resolution { requested: (-lp.loop_end).exp(), grid: f64::EPSILON });
    }
    Ok(-d.ln())
}

/// Points `F((1 - inset) e^{i phi})` on the image of the bubble map: the loop for kappa' = 4,
/// the bubble boundary for kappa' > 4.
pub fn loop_polyline(exp: &BranchingExploration, lp: &LoopTimes, n_points: usize, inset: f64) -> Result<Vec<C>> {
    (0..n_points).map(|j| bubble_map(exp, lp, C::from_polar(1.0 - inset, TAU * j as f64 / n_points as f64))).collect()
}

/// Whether `u` (original disk) lies in the bubble of `lp`, by following the target's branch.
pub fn bubble_contains(exp: &BranchingExploration, lp: &LoopTimes, u: C) -> Result<bool> {
    let path = &exp.branches[lp.target];
    let last = path.iter().position(|&n| n == lp.node).ok_or_else(|| SimError::InvalidParameter("loop node off the branch".into()))?;
    let cfg = &exp.config.loewner;
    let mut p = exp.nodes[path[0]].frame.apply(u);
    for (pos, &node_id) in path[..=last].iter().enumerate() {
        let node = &exp.nodes[node_id];
        let mut st = FlowState::new(p, cfg);
        if pos == last {
            return Ok(matches!(run_node(node, &mut st, lp.index, exp.config.step, cfg)?, LevelOutcome::Survived));
        }
        let child = &exp.nodes[path[pos + 1]];
        let ev = &exp.events[child.parent_event.expect("child node has a parent event")];
        match run_node(node, &mut st, ev.index, exp.config.step, cfg)? {
            LevelOutcome::Separated { index, side, pre, .. } if index == ev.index && side == ev.side => {
                p = child.frame.apply(pre.g);
            }
            _ => return Ok(false),
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedLoop {
    pub times: LoopTimes,
    pub polyline: Vec<C>,
}

/// The first `levels` nested loops around `target`, with their bubbles.
pub fn extract_loops(exp: &BranchingExploration, target: usize, levels: usize) -> Result<Vec<ExtractedLoop>> {
    extract_loops_with(exp, target, levels, 256, 1e-3)
}

pub fn extract_loops_with(
    exp: &BranchingExploration,
    target: usize,
    levels: usize,
    n_points: usize,
    inset: f64,
) -> Result<Vec<ExtractedLoop>> {
    if target >= exp.targets.len() {
        return Err(SimError::InvalidParameter(format!("no target {target}")));
    }
    let found = exp.loops_of(target);
    if found.len() < levels {
        return Err(SimError::HorizonExceeded { requested: levels, reached: found.len() });
    }
    found[..levels].iter().map(|&lp| Ok(ExtractedLoop { times: *lp, polyline: loop_polyline(exp, lp, n_points, inset)? })).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    /// The node lead the class is separated from.
    pub lead: usize,
    pub event: usize,
    pub members: Vec<usize>,
    pub coin: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderMatrix {
    /// `entries[z][w]` is 1 iff z comes before w.
    pub entries: Vec<Vec<u8>>,
    pub classes: Vec<ClassRecord>,
}

impl OrderMatrix {
    pub fn get(&self, z: usize, w: usize) -> u8 {
        self.entries[z][w]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First triple violating `O[z][w] = O[w][y] = 1 => O[z][y] = 1`.
    pub fn transitivity_violation(&self) -> Option<(usize, usize, usize)> {
        let n = self.len();
        for z in 0..n {
            for w in 0..n {
                for y in 0..n {
                    if self.entries[z][w] == 1 && self.entries[w][y] == 1 && self.entries[z][y] == 0 {
                        return Some((z, w, y));
                    }
                }
            }
        }
        None
    }

    /// Targets sorted by the induced order.
    pub fn ordering(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&z| std::cmp::Reverse(self.entries[z].iter().map(|&x| x as usize).sum::<usize>()));
        idx
    }
}

fn events_of_node(exp: &BranchingExploration, node: usize) -> Vec<&SeparationEvent> {
    let mut ev: Vec<&SeparationEvent> = exp.events.iter().filter(|e| e.node == node).collect();
    ev.sort_by_key(|e| (e.index, e.class[0]));
    ev
}

fn unresolved(entries: &[Vec<u8>]) -> bool {
    entries.iter().enumerate().any(|(z, row)| row.iter().enumerate().any(|(w, &x)| z != w && x == u8::MAX))
}

/// Order variables at kappa' = 4: one fair coin per class of targets cut off together from a node's lead.
pub fn assign_order_variables(exp: &BranchingExploration, seed: u64) -> Result<OrderMatrix> {
    if (exp.kappa_prime - 4.0).abs() > 1e-12 {
        return Err(SimError::InvalidParameter("coin order variables need kappa' = 4".into()));
    }
    let n = exp.targets.len();
    let mut o = vec![vec![u8::MAX; n]; n];
    for (z, row) in o.iter_mut().enumerate() {
        row[z] = 1;
    }
    let mut classes = Vec::new();
    for node in &exp.nodes {
        let z1 = node.lead;
        let events = events_of_node(exp, node.id);
        for (i, e) in events.iter().enumerate() {
            let coin = u8::from(trial_rng(seed, e.id as u64).random::<bool>());
            for &x in &e.class {
                o[z1][x] = coin;
                o[x][z1] = 1 - coin;
                // everything still with z1 is cut off from x at the same time as z1
                for later in &events[i + 1..] {
                    for &y in &later.class {
                        o[x][y] = 1 - coin;
                        o[y][x] = coin;
                    }
                }
                for &y in node.members.iter().filter(|&&y| y != z1 && !events.iter().any(|e| e.class.contains(&y))) {
                    o[x][y] = 1 - coin;
                    o[y][x] = coin;
                }
            }
            classes.push(ClassRecord { lead: z1, event: e.id, members: e.class.clone(), coin });
        }
    }
    if unresolved(&o) {
        return Err(SimError::NotSeparated);
    }
    Ok(OrderMatrix { entries: o, classes })
}

/// Order variable at kappa' > 4 from the colours at the separation of `z` and `w`.
pub fn order_from_colors(exp: &BranchingExploration, z: usize, w: usize) -> Result<u8> {
    if exp.kappa_prime <= 4.0 + 1e-12 {
        return Err(SimError::InvalidParameter("colour order needs kappa' > 4".into()));
    }
    if z == w {
        return Ok(1);
    }
    let e = exp.separating_event(z, w).ok_or(SimError::NotSeparated)?;
    let c = e.color.ok_or(SimError::NotSeparated)?;
    if c.ambiguous {
        return Err(SimError::ColorAmbiguity(c.own_arc));
    }
    let z_cut = e.class.contains(&z);
    Ok(u8::from(z_cut == c.swallowed_monochrome))
}

/// All colour order variables; fails on the first ambiguous or unseparated pair.
pub fn color_order_matrix(exp: &BranchingExploration) -> Result<OrderMatrix> {
    let n = exp.targets.len();
    let entries = (0..n).map(|z| (0..n).map(|w| order_from_colors(exp, z, w)).collect::<Result<Vec<u8>>>()).collect::<Result<_>>()?;
    Ok(OrderMatrix { entries, classes: Vec::new() })
}

/// The trunk of the node where `z` and `w` separate, viewed from `w`: driver in `w`'s clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetView {
    pub driving: DrivingProcess,
    /// `w`'s clock relative to its start, at every trunk index up to the separation.
    pub clock: Vec<f64>,
    /// `g_k(w)` and `arg g_k'(w)` along the trunk.
    pub position: Vec<C>,
    pub rotation: Vec<f64>,
    pub start: C,
    pub trunk: DrivingProcess,
}

/// Re-express the trunk of `node` as a radial Loewner chain seen from member `w`, up to trunk index `k_end`.
pub fn target_view(exp: &BranchingExploration, node: usize, w: usize, k_end: usize) -> Result<TargetView> {
    let n = &exp.nodes[node];
    let i = n.members.iter().position(|&m| m == w).ok_or_else(|| SimError::InvalidParameter(format!("target {w} not in node {node}")))?;
    let h = exp.config.step;
    let trunk = n.driving(h);
    let k_end = k_end.min(trunk.angles.len());
    let start = n.initial[i];
    let mut st = FlowState::new(start, &exp.config.loewner);
    let (mut position, mut rotation, mut clock, mut tip) = (vec![start], vec![0.0], vec![0.0], Vec::with_capacity(k_end));
    let base = (1.0 - start.norm_sqr()).ln();
    for k in 0..k_end {
        let a = st.g;
        let rot = C::from_polar(1.0, -st.lambda.im);
        let wk = C::from_polar(1.0, trunk.angles[k]);
        tip.push((rot * (wk - a) / (C::new(1.0, 0.0) - a.conj() * wk)).arg());
        st.advance(trunk.angles[k], h, k as f64 * h, h, &exp.config.loewner, w)?;
        if st.is_swallowed() {
            return Err(SimError::InvalidParameter(format!("target {w} swallowed at trunk index {k}")));
        }
        position.push(st.g);
        rotation.push(st.lambda.im);
        clock.push(st.lambda.re + base - (1.0 - st.g.norm_sqr()).ln());
    }
    // resample the tip on a uniform grid of w's clock
    let total = *clock.last().unwrap();
    let m = (total / h).floor() as usize;
    let mut angles = Vec::with_capacity(m);
    let mut k = 0;
    for j in 0..m {
        let s = (j as f64 + 0.5) * h;
        while k + 1 < k_end && clock[k + 1] <= s {
            k += 1;
        }
        angles.push(tip[k]);
    }
    Ok(TargetView { driving: DrivingProcess::new(h, angles)?, clock, position, rotation, start, trunk })
}

/// Sup distance, over trunk times before the separation of `z` and `w` and a grid in `r D`, between the
/// domains of the trunk (lead `z`) and of the chain driven by the trunk seen from `w`, both normalised at `w`.
pub fn branch_agreement(exp: &BranchingExploration, z: usize, w: usize, r: f64, n_times: usize, n_angles: usize) -> Result<f64> {
    let e = exp.separating_event(z, w).ok_or(SimError::NotSeparated)?;
    let node = &exp.nodes[e.node];
    if node.lead != z {
        return Err(SimError::InvalidParameter(format!("target {z} does not lead the separating node")));
    }
    let k_end = e.index.saturating_sub(2);
    let view = target_view(exp, e.node, w, k_end)?;
    let cfg = &exp.config.loewner;
    let h = exp.config.step;
    let one = C::new(1.0, 0.0);
    let mut grid = vec![C::new(0.0, 0.0)];
    for j in 0..n_angles {
        grid.push(C::from_polar(r, TAU * j as f64 / n_angles as f64));
        grid.push(C::from_polar(r / 2.0, TAU * j as f64 / n_angles as f64));
    }
    let mut worst = 0.0f64;
    for i in 1..=n_times {
        let k = k_end * i / n_times;
        let s = view.clock[k];
        if s > view.driving.duration() {
            break;
        }
        let a = view.position[k];
        let rot = C::from_polar(1.0, view.rotation[k]);
        for &u in &grid {
            // h_k^{-1}(u) then g_k^{-1}
            let v = u * rot;
            let hv = (v + a) / (one + a.conj() * v);
            let trunk_pt = inverse_map(&view.trunk, hv, k as f64 * h, false, cfg)?;
            let fw = inverse_map(&view.driving, u, s, false, cfg)?;
            let view_pt = (fw + view.start) / (one + view.start.conj() * fw);
            worst = worst.max((trunk_pt - view_pt).norm());
        }
    }
    Ok(worst)
}

#[derive(Serialize)]
struct TreeExport<'a> {
    kappa_prime: f64,
    seed: u64,
    horizon: f64,
    targets: Vec<[f64; 2]>,
    nodes: Vec<NodeExport>,
    events: &'a [SeparationEvent],
    separation_times: &'a [SeparationTime],
    loops: &'a [LoopTimes],
    tie_warnings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<&'a OrderMatrix>,
}

#[derive(Serialize)]
struct NodeExport {
    id: usize,
    parent_event: Option<usize>,
    lead: usize,
    members: Vec<usize>,
    start_clock: f64,
    levels: Vec<LevelExport>,
}

#[derive(Serialize)]
struct LevelExport {
    start_index: usize,
    steps: usize,
    clockwise: bool,
    complete: bool,
    loop_start: usize,
}

/// JSON of the branching tree: nodes, events, times, loops and, when given, the order coins.
pub fn write_tree_json<W: Write>(exp: &BranchingExploration, order: Option<&OrderMatrix>, out: W) -> std::io::Result<()> {
    let export = TreeExport {
        kappa_prime: exp.kappa_prime,
        seed: exp.seed,
        horizon: exp.horizon,
        targets: exp.targets.iter().map(|z| [z.re, z.im]).collect(),
        nodes: exp
            .nodes
            .iter()
            .map(|n| NodeExport {
                id: n.id,
                parent_event: n.parent_event,
                lead: n.lead,
                members: n.members.clone(),
                start_clock: n.start_clock,
                levels: n
                    .levels
                    .iter()
                    .map(|l| LevelExport {
                        start_index: l.start_index,
                        steps: l.len(),
                        clockwise: l.clockwise,
                        complete: l.complete,
                        loop_start: l.loop_start,
                    })
                    .collect(),
            })
            .collect(),
        events: &exp.events,
        separation_times: &exp.separation_times,
        loops: &exp.loops,
        tie_warnings: exp.tie_warnings,
        order,
    };
    serde_json::to_writer_pretty(out, &export).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn mobius_recentering() {
        let m = Mobius::recentering(c(0.3, -0.2), C::from_polar(1.0, 2.0));
        assert!(m.apply(c(0.3, -0.2)).norm() < 1e-14);
        assert!((m.apply(C::from_polar(1.0, 2.0)) - c(1.0, 0.0)).norm() < 1e-14);
        let u = c(-0.4, 0.5);
        assert!((m.inverse(m.apply(u)) - u).norm() < 1e-14);
        let h = 1e-6;
        let fd = ((m.apply(u + h) - m.apply(u - h)) / (2.0 * h)).norm().ln();
        assert!((fd - m.log_abs_derivative(u)).abs() < 1e-8);
    }

    #[test]
    fn harmonic_measure_of_arcs() {
        assert!((arc_measure(c(0.0, 0.0), 0.3, 1.0) - 1.0 / TAU).abs() < 1e-12);
        assert!(arc_measure(c(0.999, 0.0) * C::from_polar(1.0, 0.8), 0.3, 1.0) > 0.99);
        assert!(arc_measure(c(0.999, 0.0) * C::from_polar(1.0, 3.0), 0.3, 1.0) < 0.01);
        let z = c(0.2, 0.4);
        assert!((arc_measure(z, 0.7, 2.0) + arc_measure(z, 2.7, TAU - 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_target_has_no_separation() {
        let exp = explore_branching(4.0, &[c(0.1, 0.2)], 3, 2.0).unwrap();
        assert!(exp.separation_times.is_empty());
        assert_eq!(exp.nodes.len(), 1);
        assert!((exp.nodes[0].start_clock + (1.0 - 0.05f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(explore_branching(4.0, &[c(1.2, 0.0)], 1, 1.0).is_err());
        assert!(explore_branching(4.0, &[c(0.1, 0.0), c(0.1, 0.0)], 1, 1.0).is_err());
        assert!(explore_branching(8.5, &[c(0.1, 0.0)], 1, 1.0).is_err());
    }

    #[test]
    fn deterministic_separation_structure() {
        let t = [c(0.3, 0.0), c(-0.3, 0.0), c(0.0, 0.5)];
        let a = explore_branching(4.0, &t, 11, 6.0).unwrap();
        let b = explore_branching(4.0, &t, 11, 6.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clocks_and_loops_are_consistent() {
        let t = [c(0.3, 0.0), c(-0.3, 0.0)];
        for seed in 0..4 {
            let exp = explore_branching(4.0, &t, seed, 6.0).unwrap();
            for s in &exp.separation_times {
                assert!(s.time.is_finite() && s.time > 0.0, "{s:?}");
            }
            for lp in &exp.loops {
                assert!(lp.loop_start < lp.loop_end, "{lp:?}");
            }
            for z in 0..2 {
                let ls = exp.loops_of(z);
                for pair in ls.windows(2) {
                    assert!(pair[0].loop_end <= pair[1].loop_start + 1e-9);
                    assert_ne!(pair[0].clockwise, pair[1].clockwise);
                }
            }
        }
    }

    #[test]
    fn first_loop_conformal_radius_matches_clock() {
        let exp = explore_branching(4.0, &[c(0.2, 0.1)], 5, 8.0).unwrap();
        let lp = exp.loops_of(0)[0];
        let lcr = bubble_log_conformal_radius(&exp, lp).unwrap();
        assert!((lcr - lp.loop_end).abs() < 0.05, "{lcr} vs {}", lp.loop_end);
        let poly = loop_polyline(&exp, lp, 128, 1e-3).unwrap();
        let dist = poly.iter().map(|p| (p - exp.targets[0]).norm()).fold(f64::INFINITY, f64::min);
        let cr = (-lp.loop_end).exp();
        assert!(dist <= cr * 1.05 && cr <= 4.0 * dist * 1.05, "dist {dist} cr {cr}");
        assert!(bubble_contains(&exp, lp, exp.targets[0]).unwrap());
    }

    #[test]
    fn order_matrix_is_an_order() {
        let t = [c(0.3, 0.0), c(-0.3, 0.0), c(0.0, 0.5), c(0.1, -0.6)];
        for seed in 0..3 {
            let exp = explore_branching_with(4.0, &t, seed, 40.0, &ExplorationConfig { loops: false, ..Default::default() }).unwrap();
            let o = assign_order_variables(&exp, seed).unwrap();
            for z in 0..4 {
                assert_eq!(o.get(z, z), 1);
                for w in 0..4 {
                    if z != w {
                        assert_eq!(o.get(z, w) + o.get(w, z), 1);
                    }
                }
            }
            assert_eq!(o.transitivity_violation(), None);
        }
    }

    #[test]
    fn colour_order_flips_under_exchange() {
        let t = [c(0.3, 0.0), c(-0.3, 0.0)];
        let cfg = ExplorationConfig { loops: false, ..Default::default() };
        let exp = explore_branching_with(6.0, &t, 2, 40.0, &cfg).unwrap();
        match (order_from_colors(&exp, 0, 1), order_from_colors(&exp, 1, 0)) {
            (Ok(a), Ok(b)) => assert_eq!(a + b, 1),
            (Err(SimError::ColorAmbiguity(_)), Err(SimError::ColorAmbiguity(_))) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_export_parses() {
        let exp = explore_branching(4.0, &[c(0.3, 0.0), c(-0.3, 0.0)], 1, 4.0).unwrap();
        let mut buf = Vec::new();
        write_tree_json(&exp, None, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["targets"].as_array().unwrap().len(), 2);
    }
}
