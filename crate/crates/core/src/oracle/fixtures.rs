//! Hand-built traces with known verdicts, one per verdict class and
//! property. Vehicle motion is written down directly rather than simulated.

use std::collections::BTreeMap;

use crate::generator::{CriticalValues, TestCase};
use crate::kinematics::{Branch, DynamicsProfile, VehicleState};
use crate::sim::{build_layout, detect_stall, EndReason, Event, Snapshot, Trace};
use crate::world::{in_zone, light_phase, make_context, Agent, ConfigType, ABSENT};

pub const DT: f64 = 0.05;
pub const T_STALL: f64 = 5.0;

pub struct Fixture {
    pub name: &'static str,
    /// Expected verdict encoding.
    pub label: &'static str,
    pub tc: TestCase,
    pub analysis: CriticalValues,
    pub trace: Trace,
    /// Expected scoring ledger: incidents and completion failure.
    pub incidents: &'static [(&'static str, u32)],
    pub failure: Option<&'static str>,
}

type Motion<'a> = &'a dyn Fn(f64) -> (f64, f64);

fn cruise(s0: f64, v: f64) -> impl Fn(f64) -> (f64, f64) {
    move |t| (s0 + v * t, v)
}

/// Waits at `s0` until `t0`, then cruises at `v`.
fn wait_then(s0: f64, t0: f64, v: f64) -> impl Fn(f64) -> (f64, f64) {
    move |t| if t < t0 { (s0, 0.0) } else { (s0 + v * (t - t0), v) }
}

/// Cruises at `v` from `s0` and stops dead at `stop`.
fn until(s0: f64, v: f64, stop: f64) -> impl Fn(f64) -> (f64, f64) {
    move |t| {
        let s = s0 + v * t;
        if s < stop {
            (s, v)
        } else {
            (stop, 0.0)
        }
    }
}

struct Build<'a> {
    ct: ConfigType,
    overrides: &'a [(&'a str, f64)],
    v_e: f64,
    x_a: f64,
    x_f: f64,
    duration: f64,
    ego: Motion<'a>,
    arriving: Option<Motion<'a>>,
    ego_lat: Option<&'a dyn Fn(f64) -> f64>,
    branch_at: Option<f64>,
    collision: Option<(Agent, Agent)>,
    feasible: bool,
    end: EndReason,
}

impl<'a> Build<'a> {
    fn new(ct: ConfigType, duration: f64, ego: Motion<'a>) -> Self {
        Self {
            ct,
            overrides: &[],
            v_e: 0.0,
            x_a: ABSENT,
            x_f: ABSENT,
            duration,
            ego,
            arriving: None,
            ego_lat: None,
            branch_at: None,
            collision: None,
            feasible: false,
            end: EndReason::RouteComplete,
        }
    }

    fn finish(self) -> (TestCase, CriticalValues, Trace) {
        let dyn_ = DynamicsProfile::reference();
        let overrides: BTreeMap<String, f64> = self.overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let ctx = make_context(self.ct, &overrides).expect("fixture context");
        let tc = TestCase::new(ctx.clone(), &dyn_, self.v_e, self.x_a, self.x_f).expect("fixture case");
        let analysis = CriticalValues { x_e_hat: tc.x_e, x_a_hat: None, x_f_hat: None, feasible: self.feasible };
        let layout = build_layout(&tc, &dyn_).expect("fixture layout");

        let n = (self.duration / DT).round() as usize;
        let mut snapshots = Vec::with_capacity(n + 1);
        let mut events = Vec::new();
        let (mut ego_in, mut ego_out, mut arr_in, mut arr_out, mut departed, mut switched) =
            (false, false, false, false, false, false);
        for k in 0..=n {
            let t = k as f64 * DT;
            let (s, v) = (self.ego)(t);
            let mut ego = VehicleState::at(s, v);
            ego.lat = self.ego_lat.map_or(0.0, |f| f(t));
            if self.branch_at.is_some_and(|tb| t >= tb - 1e-9) {
                ego.branch = Branch::Alternate;
                if !switched {
                    switched = true;
                    events.push(Event::BranchTaken { vehicle: Agent::Ego, branch: Branch::Alternate, t });
                }
            }
            let arriving = self.arriving.map(|f| {
                let (s, v) = f(t);
                VehicleState::at(s, v)
            });
            let light = (self.ct == ConfigType::CrossLight).then(|| light_phase(&ctx, t, DT).expect("light"));
            if k > 0 {
                if !ego_in && in_zone(&layout, Agent::Ego, &ego) {
                    ego_in = true;
                    events.push(Event::ZoneEntry { vehicle: Agent::Ego, t });
                }
                if ego_in && !ego_out && ego.s > layout.cd {
                    ego_out = true;
                    events.push(Event::ZoneExit { vehicle: Agent::Ego, t });
                }
                if let Some(a) = &arriving {
                    if !arr_in && a.s > 0.0 {
                        arr_in = true;
                        events.push(Event::ZoneEntry { vehicle: Agent::Arriving, t });
                    }
                    if arr_in && !arr_out && a.s > layout.cd_a {
                        arr_out = true;
                        events.push(Event::ZoneExit { vehicle: Agent::Arriving, t });
                    }
                }
                if !departed && ego.lat.abs() > layout.lane_half_width {
                    departed = true;
                    events.push(Event::LaneDeparture { vehicle: Agent::Ego, t });
                }
            }
            let front = layout.front_s.map(|s| VehicleState::at(s, 0.0));
            snapshots.push(Snapshot { t, ego, arriving, front, light });
        }
        let t_end = n as f64 * DT;
        if let Some((striker, struck)) = self.collision {
            events.push(Event::Collision { striker, struck, t: t_end });
        }
        for agent in [Agent::Ego, Agent::Arriving] {
            for (t_start, t_end) in detect_stall(&snapshots, agent, T_STALL) {
                events.push(Event::Stall { vehicle: agent, t_start, t_end });
            }
        }
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let end = if self.collision.is_some() { EndReason::Collision } else { self.end };
        (tc, analysis, Trace { dt: DT, layout, snapshots, events, end })
    }
}

fn fixture(
    name: &'static str,
    label: &'static str,
    b: Build,
    incidents: &'static [(&'static str, u32)],
    failure: Option<&'static str>,
) -> Fixture {
    let (tc, analysis, trace) = b.finish();
    Fixture { name, label, tc, analysis, trace, incidents, failure }
}

pub fn all() -> Vec<Fixture> {
    let mut out = Vec::new();

    let still = |s: f64| move |_t: f64| (s, 0.0);
    let ego_wait = still(0.0);
    let arr_pass = cruise(-30.0, 8.0);
    let mut b = Build::new(ConfigType::CrossYield, 7.0, &ego_wait);
    b.x_a = 30.0;
    b.x_f = 100.0;
    b.arriving = Some(&arr_pass);
    b.end = EndReason::Yielded;
    out.push(fixture("yield_then_stop", "CS", b, &[], None));

    let mut b = Build::new(ConfigType::LaneChange, 10.0, &ego_wait);
    b.v_e = 0.0;
    b.feasible = true;
    b.end = EndReason::Timeout;
    out.push(fixture("lane_change_holds", "CO", b, &[], Some("Timeout")));

    let go = cruise(0.0, 6.0);
    let b = Build::new(ConfigType::Merging, 6.0, &go);
    out.push(fixture("empty_road", "PS", b, &[], None));

    let ego5 = cruise(0.0, 5.0);
    let arr_late = cruise(-25.0, 8.0);
    let mut b = Build::new(ConfigType::CrossYield, 6.5, &ego5);
    b.x_a = 25.0;
    b.arriving = Some(&arr_late);
    out.push(fixture("shared_zone", "PU[p1]", b, &[], None));

    let red_entry = wait_then(-0.5, 3.5, 5.0);
    let mut b = Build::new(ConfigType::CrossLight, 10.0, &red_entry);
    b.overrides = &[("tar", 5.0)];
    out.push(fixture("enter_on_red", "PU[p3]", b, &[("red_light", 1)], None));

    let slow_yellow = wait_then(-0.5, 2.0, 3.0);
    let b = Build::new(ConfigType::CrossLight, 13.0, &slow_yellow);
    out.push(fixture("late_clearance", "PU[p4]", b, &[], None));

    let stuck = until(0.0, 5.0, 10.0);
    let mut b = Build::new(ConfigType::CrossYield, 10.0, &stuck);
    b.end = EndReason::Timeout;
    out.push(fixture("stall_in_zone", "CU[p2]", b, &[], Some("Timeout")));

    let arr_meet = cruise(-6.0, 8.0);
    for (name, label, hit) in [
        ("ego_strikes_arriving", "Ae", (Agent::Ego, Agent::Arriving)),
        ("arriving_strikes_ego", "Aa", (Agent::Arriving, Agent::Ego)),
    ] {
        let mut b = Build::new(ConfigType::CrossYield, 2.0, &ego5);
        b.x_a = 6.0;
        b.arriving = Some(&arr_meet);
        b.collision = Some(hit);
        out.push(fixture(name, label, b, &[("vehicle_collision", 1)], None));
    }

    let mut b = Build::new(ConfigType::Merging, 4.2, &go);
    b.x_f = 5.0;
    b.collision = Some((Agent::Ego, Agent::Front));
    out.push(fixture("rear_end_front", "Af", b, &[("vehicle_collision", 1)], None));

    let arr_hold = until(-20.0, 8.0, -0.05);
    let mut b = Build::new(ConfigType::CrossYield, 10.0, &stuck);
    b.x_a = 20.0;
    b.arriving = Some(&arr_hold);
    b.end = EndReason::Timeout;
    out.push(fixture("mutual_block", "Blk", b, &[], Some("Blockage")));

    let mut b = Build::new(ConfigType::Merging, 6.0, &go);
    b.branch_at = Some(DT);
    out.push(fixture("wrong_branch", "CRe", b, &[], Some("RouteChange")));

    let drift = |t: f64| (2.0 * (t - 3.5)).max(0.0);
    let mut b = Build::new(ConfigType::Merging, 6.0, &go);
    b.ego_lat = Some(&drift);
    out.push(fixture("drift_off_road", "DRe", b, &[], None));

    let mut b = Build::new(ConfigType::Merging, 6.0, &go);
    b.branch_at = Some(DT);
    b.ego_lat = Some(&drift);
    out.push(fixture("wrong_branch_then_drift", "CDRe", b, &[], Some("RouteChange")));

    out
}
