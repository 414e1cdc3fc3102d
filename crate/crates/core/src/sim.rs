//! Fixed-step execution of one test case.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::TestCase;
use crate::kinematics::{Branch, CalibrationRunner, Command, DynamicsProfile, VehicleState};
use crate::policy::{ArrivingObs, Driver, Observation, PolicySpec, STOP_STANDOFF};
use crate::world::{
    gap_ahead, in_zone, light_phase, Agent, ConfigType, ConflictKind, ContextParams, LightPhase, WorldLayout,
};

/// Below this speed a vehicle counts as stopped.
pub const STALL_SPEED: f64 = 0.05;

/// A run ends once the ego has stood still this long after the zone.
const SETTLE_TIME: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub t_stall: f64,
    pub sensor_range: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.05, t_max: 60.0, t_stall: 5.0, sensor_range: 200.0, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::config(format!("sim.dt must be in (0, 1], got {}", self.dt)));
        }
        if !(self.t_stall > 0.0 && self.t_stall < self.t_max) {
            return Err(Error::config(format!(
                "sim.t_stall must be positive and below sim.t_max, got {} and {}",
                self.t_stall, self.t_max
            )));
        }
        if !(self.sensor_range > 0.0) {
            return Err(Error::config(format!("sim.sensor_range must be positive, got {}", self.sensor_range)));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub ego: VehicleState,
    pub arriving: Option<VehicleState>,
    pub front: Option<VehicleState>,
    pub light: Option<LightPhase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Collision { striker: Agent, struck: Agent, t: f64 },
    ZoneEntry { vehicle: Agent, t: f64 },
    ZoneExit { vehicle: Agent, t: f64 },
    Stall { vehicle: Agent, t_start: f64, t_end: f64 },
    BranchTaken { vehicle: Agent, branch: Branch, t: f64 },
    LaneDeparture { vehicle: Agent, t: f64 },
    /// The arriving vehicle first left its constant-speed profile.
    EmergencyBrake { vehicle: Agent, t: f64 },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Stall { t_start, .. } => *t_start,
            Event::Collision { t, .. }
            | Event::ZoneEntry { t, .. }
            | Event::ZoneExit { t, .. }
            | Event::BranchTaken { t, .. }
            | Event::LaneDeparture { t, .. }
            | Event::EmergencyBrake { t, .. } => *t,
        }
    }

    fn csv(&self) -> String {
        match self {
            Event::Collision { striker, struck, t } => {
                format!("collision,{},{},{t}", striker.as_str(), struck.as_str())
            }
            Event::ZoneEntry { vehicle, t } => format!("zone_entry,{},{t}", vehicle.as_str()),
            Event::ZoneExit { vehicle, t } => format!("zone_exit,{},{t}", vehicle.as_str()),
            Event::Stall { vehicle, t_start, t_end } => format!("stall,{},{t_start},{t_end}", vehicle.as_str()),
            Event::BranchTaken { vehicle, branch, t } => {
                format!("branch_taken,{},{},{t}", vehicle.as_str(), branch.as_str())
            }
            Event::LaneDeparture { vehicle, t } => format!("lane_departure,{},{t}", vehicle.as_str()),
            Event::EmergencyBrake { vehicle, t } => format!("emergency_brake,{},{t}", vehicle.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Collision,
    /// Ego reached the run-out distance past the zone.
    RouteComplete,
    /// Ego came to rest past the zone (behind the front vehicle).
    Settled,
    /// The arriving vehicle cleared its zone before the ego entered.
    Yielded,
    /// The ego light turned side-green with the ego waiting at the line.
    LightMissed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub layout: WorldLayout,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<Event>,
    pub end: EndReason,
}

impl Trace {
    pub fn ego_entered(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::ZoneEntry { vehicle: Agent::Ego, .. }))
    }

    pub fn ego_exited(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::ZoneExit { vehicle: Agent::Ego, .. }))
    }

    pub fn collision(&self) -> Option<(Agent, Agent)> {
        self.events.iter().find_map(|e| match e {
            Event::Collision { striker, struck, .. } => Some((*striker, *struck)),
            _ => None,
        })
    }

    pub fn stalls(&self, agent: Agent) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.events.iter().filter_map(move |e| match e {
            Event::Stall { vehicle, t_start, t_end } if *vehicle == agent => Some((*t_start, *t_end)),
            _ => None,
        })
    }

    pub fn final_t(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.t)
    }

    /// `t,vehicle,s,v,lat,branch,light` rows followed by `#EVENT` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,vehicle,s,v,lat,branch,light\n");
        for snap in &self.snapshots {
            let light = snap.light.map_or("", LightPhase::as_str);
            let vehicles = [(Agent::Ego, Some(snap.ego)), (Agent::Arriving, snap.arriving), (Agent::Front, snap.front)];
            for (agent, st) in vehicles {
                if let Some(st) = st {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        snap.t,
                        agent.as_str(),
                        st.s,
                        st.v,
                        st.lat,
                        st.branch.as_str(),
                        light
                    );
                }
            }
        }
        for e in &self.events {
            let _ = writeln!(out, "#EVENT,{}", e.csv());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Places the vehicles of `tc`.
pub fn build_layout(tc: &TestCase, dyn_: &DynamicsProfile) -> Result<WorldLayout> {
    let ctx = &tc.ctx;
    let inner_obstacle_s = if ctx.config_type == ConfigType::LaneChange {
        let gap = match ctx.inner_front_gap {
            Some(g) => g,
            None => dyn_.brake_distance(tc.v_e)?,
        };
        let s = -tc.x_e + gap;
        (s < 0.0).then_some(s)
    } else {
        None
    };
    let arriving_reserve = if ctx.conflict_kind == ConflictKind::Merge && tc.has_arriving() {
        dyn_.brake_distance(ctx.vl)?
    } else {
        0.0
    };
    Ok(WorldLayout {
        config_type: ctx.config_type,
        kind: ctx.conflict_kind,
        cd: ctx.cd,
        cd_a: ctx.cd_a,
        lane_half_width: ctx.lane_half_width,
        ego_start: -tc.x_e,
        arriving_start: tc.has_arriving().then_some(-tc.x_a),
        arriving_speed: ctx.vl,
        front_s: tc.has_front().then_some(ctx.cd + tc.x_f),
        inner_obstacle_s,
        arriving_reserve,
        runout: 1.2 * dyn_.brake_distance(dyn_.v_max())? + 5.0,
    })
}

/// Braking profile of the arriving vehicle: uniform deceleration that stops
/// it from `vl` within the reserve `B(vl)` of the ego profile.
fn arriving_profile(layout: &WorldLayout, dyn_: &DynamicsProfile) -> Result<DynamicsProfile> {
    let vl = layout.arriving_speed;
    let reserve = dyn_.brake_distance(vl)?;
    let decel = if reserve > 0.0 { vl * vl / (2.0 * reserve) } else { dyn_.decel_bound(vl) };
    DynamicsProfile::closed_form(decel, decel, vl)
}

/// Returns the striker and struck vehicle if two vehicles touch at `cur`.
pub fn detect_collision(layout: &WorldLayout, prev: &Snapshot, cur: &Snapshot) -> Option<(Agent, Agent)> {
    let ego = &cur.ego;
    let on_route = ego.branch == Branch::Assigned;
    if on_route {
        if let Some(f) = &cur.front {
            if ego.s >= f.s {
                return Some((Agent::Ego, Agent::Front));
            }
        }
        if let Some(obs) = layout.inner_obstacle_s {
            if ego.s >= obs && prev.ego.s < obs {
                return Some((Agent::Ego, Agent::Front));
            }
        }
    }
    let (Some(arr), Some(arr_prev)) = (&cur.arriving, &prev.arriving) else {
        return None;
    };
    if !on_route {
        return None;
    }
    match layout.kind {
        ConflictKind::Intersect => {
            if layout.in_crossing_box(Agent::Ego, ego.s) && layout.in_crossing_box(Agent::Arriving, arr.s) {
                let ego_new = !layout.in_crossing_box(Agent::Ego, prev.ego.s);
                let arr_new = !layout.in_crossing_box(Agent::Arriving, arr_prev.s);
                let ego_strikes = match (ego_new, arr_new) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => ego.v >= arr.v,
                };
                return Some(if ego_strikes { (Agent::Ego, Agent::Arriving) } else { (Agent::Arriving, Agent::Ego) });
            }
            None
        }
        ConflictKind::Merge => {
            let m = layout.merge_map(arr.s)?;
            let m_prev = layout.merge_map(arr_prev.s)?;
            if ego.s < layout.cd || m < layout.cd {
                return None;
            }
            let before = prev.ego.s - m_prev;
            let now = ego.s - m;
            if now != 0.0 && before.signum() == now.signum() && before != 0.0 {
                return None;
            }
            // the vehicle that was behind caught up
            let ego_strikes = if before < 0.0 {
                true
            } else if before > 0.0 {
                false
            } else {
                ego.v >= arr.v
            };
            Some(if ego_strikes { (Agent::Ego, Agent::Arriving) } else { (Agent::Arriving, Agent::Ego) })
        }
    }
}

/// Maximal intervals where `agent` moves slower than [`STALL_SPEED`] for at
/// least `t_stall`.
pub fn detect_stall(snapshots: &[Snapshot], agent: Agent, t_stall: f64) -> Vec<(f64, f64)> {
    let speed = |s: &Snapshot| match agent {
        Agent::Ego => Some(s.ego.v),
        Agent::Arriving => s.arriving.map(|a| a.v),
        Agent::Front => s.front.map(|f| f.v),
    };
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut last = 0.0;
    for snap in snapshots {
        match speed(snap) {
            Some(v) if v < STALL_SPEED => {
                start.get_or_insert(snap.t);
                last = snap.t;
            }
            _ => {
                if let Some(s) = start.take() {
                    if last - s >= t_stall - 1e-9 {
                        out.push((s, last));
                    }
                }
            }
        }
    }
    if let Some(s) = start {
        if last - s >= t_stall - 1e-9 {
            out.push((s, last));
        }
    }
    out
}

fn observe<'a>(
    layout: &WorldLayout,
    ctx: &'a ContextParams,
    dyn_: &'a DynamicsProfile,
    sim: &SimConfig,
    snap: &Snapshot,
) -> Observation<'a> {
    let ego = snap.ego;
    let mut gap_front = None;
    let mut consider = |g: Option<f64>| {
        if let Some(g) = g {
            gap_front = Some(gap_front.map_or(g, |cur: f64| cur.min(g)));
        }
    };
    if let Some(f) = &snap.front {
        consider(gap_ahead(layout, (Agent::Ego, &ego), (Agent::Front, f)));
    }
    if let Some(a) = &snap.arriving {
        consider(gap_ahead(layout, (Agent::Ego, &ego), (Agent::Arriving, a)));
    }
    let on_route = ego.branch == Branch::Assigned;
    Observation {
        own: ego,
        t: snap.t,
        dt: sim.dt,
        dist_to_zone_entrance: -ego.s,
        dist_to_zone_exit: layout.cd - ego.s,
        gap_front,
        front_past_zone: snap.front.filter(|_| on_route).map(|f| f.s - layout.cd),
        inner_obstacle: layout.inner_obstacle_s.filter(|o| on_route && ego.s < *o).map(|o| o - ego.s),
        arriving: snap
            .arriving
            .filter(|a| -a.s <= sim.sensor_range)
            .map(|a| ArrivingObs { dist_to_zone: -a.s, speed: a.v }),
        light: snap.light,
        ctx,
        dyn_,
    }
}

fn arriving_command(layout: &WorldLayout, arr_dyn: &DynamicsProfile, arr: &VehicleState, ego: &VehicleState, dt: f64) -> Command {
    let mut target = layout.arriving_speed;
    if let Some(gap) = gap_ahead(layout, (Agent::Arriving, arr), (Agent::Ego, ego)) {
        target = target.min(arr_dyn.envelope_speed(gap, dt));
    }
    // do not drive into a zone the ego is stuck in
    if in_zone(layout, Agent::Ego, ego) && ego.v < STALL_SPEED && arr.s <= 0.0 {
        target = target.min(arr_dyn.envelope_speed(-arr.s - STOP_STANDOFF, dt));
    }
    arr_dyn.clamp_command(arr, Command::accel((target - arr.v) / dt), dt)
}

/// Simulates `tc` under `policy`; deterministic in `(tc, policy, sim.seed)`.
pub fn run_scenario(tc: &TestCase, dyn_: &DynamicsProfile, policy: &PolicySpec, sim: &SimConfig) -> Result<Trace> {
    sim.validate()?;
    tc.validate(dyn_)?;
    let ctx = &tc.ctx;
    let layout = build_layout(tc, dyn_)?;
    let arr_dyn = if layout.has_arriving() { Some(arriving_profile(&layout, dyn_)?) } else { None };
    let dt = sim.dt;
    let light_at = |t: f64| -> Option<LightPhase> {
        (ctx.config_type == ConfigType::CrossLight).then(|| light_phase(ctx, t, dt).expect("light context"))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut driver = Driver::new(policy.clone(), &mut rng);

    let mut snap = Snapshot {
        t: 0.0,
        ego: VehicleState::at(layout.ego_start, tc.v_e.min(dyn_.v_max())),
        arriving: layout.arriving_start.map(|u| VehicleState::at(u, layout.arriving_speed)),
        front: layout.front_s.map(|s| VehicleState::at(s, 0.0)),
        light: light_at(0.0),
    };
    let mut snapshots = vec![snap.clone()];
    let mut events = Vec::new();
    let (mut ego_in, mut ego_out, mut arr_in, mut arr_out) = (false, false, false, false);
    let (mut departed, mut braked) = (false, false);
    let mut ego_rest_since: Option<f64> = None;
    let mut end = EndReason::Timeout;

    for k in 1..=sim.steps() {
        let t = k as f64 * dt;
        let obs = observe(&layout, ctx, dyn_, sim, &snap);
        let cmd = dyn_.clamp_command(&snap.ego, driver.decide(&obs), dt);
        let mut ego = dyn_.step(&snap.ego, &cmd, dt);
        if snap.ego.branch == Branch::Assigned && snap.ego.s <= 0.0 && ego.s > 0.0 {
            if let Some(Branch::Alternate) = cmd.branch_request {
                ego.branch = Branch::Alternate;
                events.push(Event::BranchTaken { vehicle: Agent::Ego, branch: Branch::Alternate, t });
            }
        }

        let arriving = match (&snap.arriving, &arr_dyn) {
            (Some(a), Some(ad)) => {
                let c = arriving_command(&layout, ad, a, &snap.ego, dt);
                if c.accel < 0.0 && !braked {
                    braked = true;
                    events.push(Event::EmergencyBrake { vehicle: Agent::Arriving, t });
                }
                Some(ad.step(a, &c, dt))
            }
            _ => None,
        };

        let next = Snapshot { t, ego, arriving, front: snap.front, light: light_at(t) };

        if !ego_in && in_zone(&layout, Agent::Ego, &next.ego) {
            ego_in = true;
            events.push(Event::ZoneEntry { vehicle: Agent::Ego, t });
        }
        if ego_in && !ego_out && next.ego.s > layout.cd {
            ego_out = true;
            events.push(Event::ZoneExit { vehicle: Agent::Ego, t });
        }
        if let Some(a) = &next.arriving {
            if !arr_in && a.s > 0.0 {
                arr_in = true;
                events.push(Event::ZoneEntry { vehicle: Agent::Arriving, t });
            }
            if arr_in && !arr_out && a.s > layout.cd_a {
                arr_out = true;
                events.push(Event::ZoneExit { vehicle: Agent::Arriving, t });
            }
        }
        if !departed && next.ego.lat.abs() > layout.lane_half_width {
            departed = true;
            events.push(Event::LaneDeparture { vehicle: Agent::Ego, t });
        }

        let hit = detect_collision(&layout, &snap, &next);
        snapshots.push(next.clone());
        snap = next;
        if let Some((striker, struck)) = hit {
            events.push(Event::Collision { striker, struck, t });
            end = EndReason::Collision;
            break;
        }

        let ego = &snap.ego;
        let past_zone = ego.s > layout.cd || (ego.branch == Branch::Alternate && ego.s > 0.0);
        if past_zone && ego.s >= layout.cd + layout.runout {
            end = EndReason::RouteComplete;
            break;
        }
        if past_zone && ego.v < STALL_SPEED {
            let since = *ego_rest_since.get_or_insert(t);
            if t - since >= SETTLE_TIME - 1e-9 {
                end = EndReason::Settled;
                break;
            }
        } else {
            ego_rest_since = None;
        }
        let waiting = !ego_in && ego.branch == Branch::Assigned && ego.s <= 0.0;
        if waiting && arr_out {
            end = EndReason::Yielded;
            break;
        }
        if waiting && snap.light == Some(LightPhase::SideGreen) && ego.v < STALL_SPEED {
            end = EndReason::LightMissed;
            break;
        }
    }

    for agent in [Agent::Ego, Agent::Arriving] {
        for (t_start, t_end) in detect_stall(&snapshots, agent, sim.t_stall) {
            events.push(Event::Stall { vehicle: agent, t_start, t_end });
        }
    }
    events.sort_by(|a, b| a.time().total_cmp(&b.time()));
    Ok(Trace { dt, layout, snapshots, events, end })
}

/// Calibration scenarios driven by a policy instead of an ideal driver.
/// The ego runs on an open road well past any conflict zone.
#[derive(Debug, Clone)]
pub struct PolicyRig {
    pub policy: PolicySpec,
    pub profile: DynamicsProfile,
    pub sim: SimConfig,
    pub horizon: f64,
}

impl PolicyRig {
    pub fn new(policy: PolicySpec, profile: DynamicsProfile, sim: SimConfig) -> Self {
        let mut policy = policy;
        policy.g_min = 0.0;
        Self { policy, profile, sim, horizon: 120.0 }
    }

    fn drive_until<F: FnMut(&VehicleState, f64) -> bool>(&self, v: f64, obstacle: Option<f64>, mut stop: F) -> bool {
        let ctx = ContextParams::new(ConfigType::Merging);
        let origin = ctx.cd + 1000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.sim.seed);
        let mut driver = Driver::new(self.policy.clone(), &mut rng);
        let dt = self.sim.dt;
        let mut st = VehicleState::at(origin, v.min(self.profile.v_max()));
        let steps = (self.horizon / dt).ceil() as usize;
        for k in 1..=steps {
            let obs = Observation {
                own: st,
                t: (k - 1) as f64 * dt,
                dt,
                dist_to_zone_entrance: -st.s,
                dist_to_zone_exit: ctx.cd - st.s,
                gap_front: obstacle.map(|o| origin + o - st.s),
                front_past_zone: None,
                inner_obstacle: None,
                arriving: None,
                light: None,
                ctx: &ctx,
                dyn_: &self.profile,
            };
            let cmd = self.profile.clamp_command(&st, driver.decide(&obs), dt);
            st = self.profile.step(&st, &cmd, dt);
            let moved = VehicleState { s: st.s - origin, ..st };
            if stop(&moved, k as f64 * dt) {
                return true;
            }
        }
        false
    }
}

impl CalibrationRunner for PolicyRig {
    fn collides(&mut self, v: f64, obstacle: f64) -> bool {
        let mut hit = false;
        self.drive_until(v, Some(obstacle), |st, _| {
            hit = st.s >= obstacle;
            hit || st.v == 0.0
        });
        hit
    }

    fn drive(&mut self, v: f64, x: f64) -> Option<(f64, f64)> {
        let mut out = None;
        self.drive_until(v, None, |st, t| {
            if st.s >= x {
                out = Some((t, st.v));
            }
            out.is_some()
        });
        out
    }
}
