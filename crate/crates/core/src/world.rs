//! Conflict contexts, zone geometry in route coordinates and the
//! traffic-light phase machine.
//!
//! Every vehicle moves along its own route coordinate. The ego route has the
//! critical zone on `(0, cd]`, the arriving route on `(0, cd_a]`. For merge
//! contexts the arriving route joins the ego route at the zone exit:
//! arriving coordinate `u` sits at ego coordinate `cd + (u - cd_a)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Branch, VehicleState};

/// Distances at or beyond this value mean "no such vehicle".
pub const ABSENT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigType {
    Merging,
    LaneChange,
    CrossYield,
    CrossLight,
}

impl ConfigType {
    pub const ALL: [ConfigType; 4] = [ConfigType::Merging, ConfigType::LaneChange, ConfigType::CrossYield, ConfigType::CrossLight];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigType::Merging => "merging",
            ConfigType::LaneChange => "lane_change",
            ConfigType::CrossYield => "cross_yield",
            ConfigType::CrossLight => "cross_light",
        }
    }

    pub fn has_arriving(self) -> bool {
        self != ConfigType::CrossLight
    }
}

impl fmt::Display for ConfigType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "merging" | "merge" => Ok(ConfigType::Merging),
            "lane_change" | "lanechange" => Ok(ConfigType::LaneChange),
            "cross_yield" | "crossyield" | "yield" => Ok(ConfigType::CrossYield),
            "cross_light" | "crosslight" | "light" | "traffic_light" => Ok(ConfigType::CrossLight),
            other => Err(Error::config(format!("unknown configuration type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Merge,
    Intersect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextParams {
    pub config_type: ConfigType,
    pub conflict_kind: ConflictKind,
    /// Zone length along the ego route (m).
    pub cd: f64,
    /// Constant arriving speed (m/s).
    pub vl: f64,
    /// Zone length along the arriving route (m).
    pub cd_a: f64,
    pub t_y: f64,
    pub t_ar: f64,
    pub lane_half_width: f64,
    /// Distance to the inner-lane obstacle (lane change only). `None` means
    /// "B(v_e)", resolved per test case.
    pub inner_front_gap: Option<f64>,
}

/// Keys accepted by [`make_context`].
pub const CONTEXT_KEYS: [&str; 7] = ["cd", "vl", "ty", "tar", "cda", "lane_half_width", "inner_front_gap"];

pub fn make_context(config_type: ConfigType, overrides: &BTreeMap<String, f64>) -> Result<ContextParams> {
    if let Some(k) = overrides.keys().find(|k| !CONTEXT_KEYS.contains(&k.as_str())) {
        return Err(Error::config(format!("context: unknown key `{k}`")));
    }
    let get = |k: &str, d: f64| overrides.get(k).copied().unwrap_or(d);
    let cd = get("cd", if config_type == ConfigType::LaneChange { 13.5 } else { 20.0 });
    let ctx = ContextParams {
        config_type,
        conflict_kind: match config_type {
            ConfigType::Merging | ConfigType::LaneChange => ConflictKind::Merge,
            ConfigType::CrossYield | ConfigType::CrossLight => ConflictKind::Intersect,
        },
        cd,
        vl: get("vl", 8.0),
        cd_a: get("cda", cd),
        t_y: get("ty", 3.0),
        t_ar: get("tar", 2.0),
        lane_half_width: get("lane_half_width", 1.75),
        inner_front_gap: overrides.get("inner_front_gap").copied(),
    };
    ctx.validate()?;
    Ok(ctx)
}

impl ContextParams {
    pub fn new(config_type: ConfigType) -> Self {
        make_context(config_type, &BTreeMap::new()).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("context.{name} must be positive, got {v}")))
            }
        };
        positive("cd", self.cd)?;
        positive("lane_half_width", self.lane_half_width)?;
        if self.config_type.has_arriving() {
            positive("vl", self.vl)?;
            positive("cda", self.cd_a)?;
        }
        if self.config_type == ConfigType::CrossLight {
            positive("ty", self.t_y)?;
            positive("tar", self.t_ar)?;
        }
        if let Some(g) = self.inner_front_gap {
            if !(g >= 0.0) {
                return Err(Error::config(format!("context.inner_front_gap must be non-negative, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LightPhase {
    EgoGreen,
    EgoYellow,
    AllRed,
    SideGreen,
}

impl LightPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            LightPhase::EgoGreen => "green",
            LightPhase::EgoYellow => "yellow",
            LightPhase::AllRed => "all_red",
            LightPhase::SideGreen => "side_green",
        }
    }

    /// Whether the ego may legally enter the junction.
    pub fn allows_entry(self) -> bool {
        matches!(self, LightPhase::EgoGreen | LightPhase::EgoYellow)
    }
}

/// Green at t = 0, yellow from the next step for `t_y`, then all-red for
/// `t_ar`, then the side road stays green.
pub fn light_phase(ctx: &ContextParams, t: f64, dt: f64) -> Result<LightPhase> {
    if ctx.config_type != ConfigType::CrossLight {
        return Err(Error::contract(format!("no traffic light in a {} context", ctx.config_type)));
    }
    Ok(if t <= 0.0 {
        LightPhase::EgoGreen
    } else if t <= dt + ctx.t_y {
        LightPhase::EgoYellow
    } else if t <= dt + ctx.t_y + ctx.t_ar {
        LightPhase::AllRed
    } else {
        LightPhase::SideGreen
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Ego,
    Arriving,
    Front,
}

impl Agent {
    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Ego => "ego",
            Agent::Arriving => "arriving",
            Agent::Front => "front",
        }
    }
}

impl FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(Agent::Ego),
            "arriving" => Ok(Agent::Arriving),
            "front" => Ok(Agent::Front),
            other => Err(Error::Classification(format!("unknown vehicle `{other}`"))),
        }
    }
}

/// Placement of all vehicles and zones for one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldLayout {
    pub config_type: ConfigType,
    pub kind: ConflictKind,
    pub cd: f64,
    pub cd_a: f64,
    pub lane_half_width: f64,
    pub ego_start: f64,
    pub arriving_start: Option<f64>,
    pub arriving_speed: f64,
    /// Front vehicle position on the ego route.
    pub front_s: Option<f64>,
    /// Static obstacle on the ego's starting lane (lane change), only when it
    /// sits before the zone entrance.
    pub inner_obstacle_s: Option<f64>,
    /// Distance before its zone entrance from which the arriving vehicle is
    /// treated as occupying the conflict (merge contexts: B(vl)).
    pub arriving_reserve: f64,
    /// Distance past the zone exit that ends a completed run.
    pub runout: f64,
}

impl WorldLayout {
    pub fn has_arriving(&self) -> bool {
        self.arriving_start.is_some()
    }

    /// Ego-route coordinate of an arriving-route coordinate (merge contexts).
    pub fn merge_map(&self, u: f64) -> Option<f64> {
        (self.kind == ConflictKind::Merge).then(|| self.cd + (u - self.cd_a))
    }

    /// Total ego route length used for route completion.
    pub fn route_length(&self) -> f64 {
        -self.ego_start + self.cd + self.runout
    }

    /// Crossing box on each route around the zone midpoint (intersect contexts).
    pub fn in_crossing_box(&self, agent: Agent, s: f64) -> bool {
        let mid = match agent {
            Agent::Ego => self.cd / 2.0,
            Agent::Arriving => self.cd_a / 2.0,
            Agent::Front => return false,
        };
        (s - mid).abs() <= self.lane_half_width
    }
}

/// Zone membership; the entrance line itself is outside, the exit is inside.
pub fn in_zone(layout: &WorldLayout, agent: Agent, state: &VehicleState) -> bool {
    match agent {
        Agent::Ego => state.branch == Branch::Assigned && state.s > 0.0 && state.s <= layout.cd,
        Agent::Arriving => state.s > 0.0 && state.s <= layout.cd_a,
        Agent::Front => false,
    }
}

/// Distance from `follower` to `leader` when they share a lane segment and
/// the leader is ahead.
pub fn gap_ahead(layout: &WorldLayout, follower: (Agent, &VehicleState), leader: (Agent, &VehicleState)) -> Option<f64> {
    let ahead = |from: f64, to: f64| (to >= from).then_some(to - from);
    match (follower, leader) {
        ((Agent::Ego, e), (Agent::Front, f)) => {
            if e.branch != Branch::Assigned {
                return None;
            }
            ahead(e.s, f.s)
        }
        ((Agent::Ego, e), (Agent::Arriving, a)) => {
            let mapped = layout.merge_map(a.s)?;
            if e.branch != Branch::Assigned || e.s <= 0.0 || a.s <= layout.cd_a {
                return None;
            }
            ahead(e.s, mapped)
        }
        ((Agent::Arriving, a), (Agent::Ego, e)) => {
            let mapped = layout.merge_map(a.s)?;
            if e.branch != Branch::Assigned || e.s <= layout.cd {
                return None;
            }
            ahead(mapped, e.s)
        }
        _ => None,
    }
}
