//! Control policies under test and the feasibility predicates they share
//! with the generator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Branch, Command, DynamicsProfile, VehicleState};
use crate::world::{ConfigType, ConflictKind, ContextParams, LightPhase};

/// Distance kept to the zone entrance when stopping in caution.
pub const STOP_STANDOFF: f64 = 0.05;

/// Relative slack for feasibility comparisons.
const FEAS_EPS: f64 = 1e-9;

fn leq(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + FEAS_EPS * rhs.abs().max(1.0)
}

/// `B(v_e) <= x_e`: the ego can still stop before the zone.
pub fn caution_feasible(dyn_: &DynamicsProfile, v_e: f64, x_e: f64) -> bool {
    dyn_.brake_distance(v_e).map(|b| leq(b, x_e)).unwrap_or(false)
}

/// Whether the ego can cross the zone right now under worst-case arriving
/// and front behaviour. `x_a` may be infinite (no arriving vehicle).
pub fn progress_feasible(ctx: &ContextParams, dyn_: &DynamicsProfile, v_e: f64, x_e: f64, x_a: f64, x_f: f64) -> bool {
    progress_feasible_after(ctx, dyn_, v_e, x_e, x_a, x_f, 0.0)
}

/// As [`progress_feasible`], evaluated `elapsed` seconds after the light
/// turned yellow.
pub fn progress_feasible_after(
    ctx: &ContextParams,
    dyn_: &DynamicsProfile,
    v_e: f64,
    x_e: f64,
    x_a: f64,
    x_f: f64,
    elapsed: f64,
) -> bool {
    if x_e < 0.0 || x_f < 0.0 || x_a < 0.0 || v_e < 0.0 {
        return false;
    }
    let run = x_e + ctx.cd;
    let Ok(t_exit) = dyn_.accel_time(v_e, run) else {
        return false;
    };
    let Ok(v_exit) = dyn_.accel_speed(v_e, run) else {
        return false;
    };
    let Ok(b_exit) = dyn_.brake_distance(v_exit) else {
        return false;
    };
    if !leq(b_exit, x_f) {
        return false;
    }
    match ctx.config_type {
        ConfigType::CrossLight => {
            let Ok(t_entry) = dyn_.accel_time(v_e, x_e) else {
                return false;
            };
            leq(t_entry, ctx.t_y - elapsed) && leq(t_exit, ctx.t_y + ctx.t_ar - elapsed)
        }
        _ => {
            if x_a.is_infinite() {
                return true;
            }
            match arriving_requirement(ctx, dyn_, t_exit) {
                Some(need) => leq(need, x_a),
                None => false,
            }
        }
    }
}

/// Minimal arriving distance for an ego that exits the zone after `t_exit`.
pub(crate) fn arriving_requirement(ctx: &ContextParams, dyn_: &DynamicsProfile, t_exit: f64) -> Option<f64> {
    let travel = ctx.vl * t_exit;
    match ctx.conflict_kind {
        ConflictKind::Merge => dyn_.brake_distance(ctx.vl).ok().map(|b| b + travel),
        ConflictKind::Intersect => Some(travel),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Lateral drift rate after the zone (m/s).
    pub rate: f64,
    /// Request the alternate branch at the decision point.
    pub change_route: bool,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self { rate: 2.0, change_route: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicyId {
    /// Caution until crossing is provably safe, then commit.
    SafeTwoPhase,
    /// Commits immediately and ignores the front vehicle until the zone is
    /// cleared. Used to probe just below critical values.
    ForcedCommit,
    Aggressive,
    Overcautious,
    RedLightIgnorer,
    Drifter(DriftSpec),
    Noisy { inner: Box<PolicyId>, sigma: f64 },
}

impl PolicyId {
    pub fn noisy(inner: PolicyId, sigma: f64) -> Result<Self> {
        if matches!(inner, PolicyId::Noisy { .. }) {
            return Err(Error::config("policy: Noisy must wrap a non-Noisy policy"));
        }
        if !(sigma >= 0.0 && sigma < 1.0) {
            return Err(Error::config(format!("policy.sigma must be in [0, 1), got {sigma}")));
        }
        Ok(PolicyId::Noisy { inner: Box::new(inner), sigma })
    }

    fn base(&self) -> &PolicyId {
        match self {
            PolicyId::Noisy { inner, .. } => inner,
            other => other,
        }
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self, PolicyId::Noisy { .. })
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyId::SafeTwoPhase => f.write_str("safe_two_phase"),
            PolicyId::ForcedCommit => f.write_str("forced_commit"),
            PolicyId::Aggressive => f.write_str("aggressive"),
            PolicyId::Overcautious => f.write_str("overcautious"),
            PolicyId::RedLightIgnorer => f.write_str("red_light_ignorer"),
            PolicyId::Drifter(d) => write!(f, "drifter(rate={}, change_route={})", d.rate, d.change_route),
            PolicyId::Noisy { inner, sigma } => write!(f, "noisy({inner}, sigma={sigma})"),
        }
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    /// Parses a bare policy name; parameterised variants take defaults.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "safe_two_phase" | "safe" => PolicyId::SafeTwoPhase,
            "forced_commit" => PolicyId::ForcedCommit,
            "aggressive" => PolicyId::Aggressive,
            "overcautious" => PolicyId::Overcautious,
            "red_light_ignorer" => PolicyId::RedLightIgnorer,
            "drifter" => PolicyId::Drifter(DriftSpec::default()),
            other => return Err(Error::config(format!("unknown policy `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub id: PolicyId,
    /// Commit margin m_c (m) subtracted from observed distances.
    pub margin: f64,
    /// Standstill gap kept to a leader once past the zone (m).
    pub g_min: f64,
}

impl PolicySpec {
    pub fn new(id: PolicyId) -> Self {
        Self { id, margin: 0.0, g_min: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivingObs {
    /// Distance to the arriving vehicle's zone entrance; negative once inside.
    pub dist_to_zone: f64,
    pub speed: f64,
}

/// What the ego knows at one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub own: VehicleState,
    pub t: f64,
    pub dt: f64,
    pub dist_to_zone_entrance: f64,
    pub dist_to_zone_exit: f64,
    /// Nearest leader on the ego's lane.
    pub gap_front: Option<f64>,
    /// Front vehicle distance past the zone exit.
    pub front_past_zone: Option<f64>,
    /// Obstacle on the starting lane before the zone.
    pub inner_obstacle: Option<f64>,
    /// `None` when absent or beyond sensor range.
    pub arriving: Option<ArrivingObs>,
    pub light: Option<LightPhase>,
    pub ctx: &'a ContextParams,
    pub dyn_: &'a DynamicsProfile,
}

/// A policy instance for one run. Holds the commit flag and, for noisy
/// policies, the per-run perturbation.
#[derive(Debug, Clone)]
pub struct Driver {
    spec: PolicySpec,
    committed: bool,
    scale: f64,
}

impl Driver {
    pub fn new<R: Rng + ?Sized>(spec: PolicySpec, rng: &mut R) -> Self {
        let scale = match &spec.id {
            PolicyId::Noisy { sigma, .. } if *sigma > 0.0 => 1.0 + rng.gen_range(-*sigma..=*sigma),
            _ => 1.0,
        };
        Self { spec, committed: false, scale }
    }

    pub fn committed(&self) -> bool {
        self.committed
    }

    /// Multiplier applied to perceived distances (1 unless noisy).
    pub fn perception_scale(&self) -> f64 {
        self.scale
    }

    pub fn decide(&mut self, obs: &Observation) -> Command {
        let base = self.spec.id.base().clone();
        let dyn_ = obs.dyn_;
        let v = obs.own.v;
        let a_max = dyn_.accel_bound(v);
        let before_zone = obs.own.branch == Branch::Assigned && obs.dist_to_zone_entrance >= 0.0;

        if base == PolicyId::Aggressive {
            return Command::accel(a_max);
        }

        if !self.committed {
            self.committed = if !before_zone {
                true
            } else {
                match base {
                    PolicyId::ForcedCommit => true,
                    PolicyId::Overcautious => false,
                    _ => self.progress_now(obs, base != PolicyId::RedLightIgnorer),
                }
            };
        }

        let mut cmd = if self.committed {
            let past_zone = obs.dist_to_zone_exit < 0.0 || obs.own.branch != Branch::Assigned;
            let guard = base != PolicyId::ForcedCommit || past_zone;
            let room = if guard {
                let g = if past_zone { self.spec.g_min } else { 0.0 };
                obs.gap_front.map(|gap| gap - g)
            } else {
                None
            };
            track(dyn_, v, room, obs.dt, a_max)
        } else {
            let mut room = obs.dist_to_zone_entrance - STOP_STANDOFF;
            if let Some(gap) = obs.gap_front {
                room = room.min(gap - self.spec.g_min);
            }
            if let Some(gap) = obs.inner_obstacle {
                room = room.min(gap - self.spec.g_min);
            }
            track(dyn_, v, Some(room), obs.dt, a_max)
        };

        if let PolicyId::Drifter(d) = base {
            let left_route = obs.own.branch == Branch::Alternate && obs.dist_to_zone_entrance < 0.0;
            if obs.dist_to_zone_exit < 0.0 || left_route {
                cmd.lat_rate = d.rate;
            }
            if d.change_route {
                cmd.branch_request = Some(Branch::Alternate);
            }
        }
        cmd
    }

    fn progress_now(&self, obs: &Observation, respect_light: bool) -> bool {
        let ctx = obs.ctx;
        let mut elapsed = 0.0;
        if ctx.config_type == ConfigType::CrossLight && respect_light {
            match obs.light {
                Some(phase) if phase.allows_entry() => elapsed = obs.t,
                _ => return false,
            }
        }
        let x_a = match obs.arriving {
            None => f64::INFINITY,
            Some(a) if a.dist_to_zone >= 0.0 => a.dist_to_zone,
            // cleared the zone: now at most a leader on the shared lane
            Some(a) if -a.dist_to_zone > ctx.cd_a => f64::INFINITY,
            Some(_) => return false,
        };
        let x_f = obs.front_past_zone.unwrap_or(f64::INFINITY);
        let perceive = |x: f64| if x.is_finite() { x * self.scale - self.spec.margin } else { x };
        let mut ctx_eff = ctx.clone();
        if !respect_light && ctx.config_type == ConfigType::CrossLight {
            ctx_eff.t_y = f64::INFINITY;
            ctx_eff.t_ar = f64::INFINITY;
        }
        progress_feasible_after(&ctx_eff, obs.dyn_, obs.own.v, obs.dist_to_zone_entrance, perceive(x_a), perceive(x_f), elapsed)
    }
}

/// Full acceleration limited by a braking envelope over `room`.
fn track(dyn_: &DynamicsProfile, v: f64, room: Option<f64>, dt: f64, a_max: f64) -> Command {
    match room {
        None => Command::accel(a_max),
        Some(r) => {
            let target = dyn_.envelope_speed(r, dt);
            Command::accel(((target - v) / dt).min(a_max))
        }
    }
}

/// One-shot decision from a fresh policy instance.
pub fn decide<R: Rng + ?Sized>(spec: &PolicySpec, obs: &Observation, rng: &mut R) -> Command {
    Driver::new(spec.clone(), rng).decide(obs)
}
