//! Longitudinal vehicle dynamics.
//!
//! A vehicle's capability is summarised by three A/D functions:
//! braking distance `B(v)`, acceleration time `AT(v, x)` and reached speed
//! `AV(v, x)`. They come either from closed-form uniform-acceleration bounds
//! or from empirically measured tables.

mod calibrate;
mod tables;

use serde::{Deserialize, Serialize};

pub use calibrate::{estimate_accel_profile, estimate_braking, CalibrationRunner, IdealRig, MAX_OBSTACLE_DISTANCE};
pub use tables::{AdTables, CSV_HEADER};

use crate::error::{Error, Result};

/// Default integration step (s).
pub const DEFAULT_DT: f64 = 0.05;

const PID_SHARED_TABLE: &str = include_str!("../../data/ad_pid_shared.csv");
const MILE_TABLE: &str = include_str!("../../data/ad_mile.csv");

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    ClosedForm { a_max: f64, b_max: f64 },
    Tabulated(AdTables),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsProfile {
    v_max: f64,
    dynamics: Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Assigned,
    Alternate,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Assigned => "assigned",
            Branch::Alternate => "alternate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Route coordinate (m), increasing in the travel direction.
    pub s: f64,
    pub v: f64,
    /// Lateral offset from the lane centre (m).
    pub lat: f64,
    pub branch: Branch,
}

impl VehicleState {
    pub fn at(s: f64, v: f64) -> Self {
        Self { s, v, lat: 0.0, branch: Branch::Assigned }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub accel: f64,
    pub lat_rate: f64,
    pub branch_request: Option<Branch>,
}

impl Command {
    pub fn accel(accel: f64) -> Self {
        Self { accel, ..Self::default() }
    }
}

fn check_speed(v: f64) -> Result<()> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::domain(format!("speed must be non-negative, got {v}")));
    }
    Ok(())
}

fn check_distance(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("distance must be non-negative, got {x}")));
    }
    Ok(())
}

impl DynamicsProfile {
    pub fn closed_form(a_max: f64, b_max: f64, v_max: f64) -> Result<Self> {
        for (name, val) in [("a_max", a_max), ("b_max", b_max), ("v_max", v_max)] {
            if !(val > 0.0 && val.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {val}")));
            }
        }
        Ok(Self { v_max, dynamics: Dynamics::ClosedForm { a_max, b_max } })
    }

    pub fn tabulated(tables: AdTables, v_max: f64) -> Result<Self> {
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::config(format!("v_max must be positive and finite, got {v_max}")));
        }
        Ok(Self { v_max, dynamics: Dynamics::Tabulated(tables) })
    }

    /// The closed-form vehicle used throughout the test suite: a=2, b=4, v_max=6.5.
    pub fn reference() -> Self {
        Self::closed_form(2.0, 4.0, 6.5).expect("valid constants")
    }

    /// Named profiles: `reference`, and the measured autopilot tables
    /// `interfuser` (5.0 m/s), `transfuser` (4.0 m/s), `lmdrive` (6.5 m/s)
    /// and `mile` (6.5 m/s).
    pub fn preset(name: &str) -> Result<Self> {
        let shared = || AdTables::from_csv(PID_SHARED_TABLE);
        match name.to_ascii_lowercase().as_str() {
            "reference" => Ok(Self::reference()),
            "interfuser" => Self::tabulated(shared()?, 5.0),
            "transfuser" => Self::tabulated(shared()?, 4.0),
            "lmdrive" => Self::tabulated(shared()?, 6.5),
            "mile" => Self::tabulated(AdTables::from_csv(MILE_TABLE)?, 6.5),
            other => Err(Error::config(format!("unknown dynamics preset `{other}`"))),
        }
    }

    pub fn shipped_table(name: &str) -> Option<&'static str> {
        match name {
            "pid_shared" => Some(PID_SHARED_TABLE),
            "mile" => Some(MILE_TABLE),
            _ => None,
        }
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// B(v): distance needed to brake from `v` to standstill.
    ///
    /// The closed form is exact for any speed; tables clamp at their edge.
    pub fn brake_distance(&self, v: f64) -> Result<f64> {
        check_speed(v)?;
        Ok(match &self.dynamics {
            Dynamics::ClosedForm { b_max, .. } => v * v / (2.0 * b_max),
            Dynamics::Tabulated(t) => t.braking_at(v.min(self.v_max)),
        })
    }

    /// AV(v, x): speed reached after accelerating over `x` from `v`.
    pub fn accel_speed(&self, v: f64, x: f64) -> Result<f64> {
        check_speed(v)?;
        check_distance(x)?;
        if x == 0.0 {
            return Ok(v);
        }
        Ok(match &self.dynamics {
            Dynamics::ClosedForm { a_max, .. } => (v * v + 2.0 * a_max * x).sqrt().min(self.v_max),
            Dynamics::Tabulated(t) => {
                let (av, _) = t.accel_lookup(v, x, self.v_max);
                av.max(v).min(self.v_max)
            }
        })
    }

    /// AT(v, x): time to cover `x` while accelerating from `v`.
    pub fn accel_time(&self, v: f64, x: f64) -> Result<f64> {
        check_speed(v)?;
        check_distance(x)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let v_max = self.v_max;
        let t = match &self.dynamics {
            Dynamics::ClosedForm { a_max, .. } => {
                let v0 = v.min(v_max);
                let ramp = (v_max * v_max - v0 * v0) / (2.0 * a_max);
                if x <= ramp {
                    ((v0 * v0 + 2.0 * a_max * x).sqrt() - v0) / a_max
                } else {
                    (v_max - v0) / a_max + (x - ramp) / v_max
                }
            }
            // Nobody covers x faster than cruising at v_max.
            Dynamics::Tabulated(t) => t.accel_lookup(v, x, v_max).1.max(x / v_max),
        };
        if !t.is_finite() {
            return Err(Error::Unreachable(format!("distance {x} m cannot be covered from speed {v} m/s")));
        }
        Ok(t)
    }

    /// Largest acceleration available at speed `v`.
    ///
    /// Tables: central difference of AV²/2 over the first two grid steps.
    pub fn accel_bound(&self, v: f64) -> f64 {
        match &self.dynamics {
            Dynamics::ClosedForm { a_max, .. } => *a_max,
            Dynamics::Tabulated(t) => {
                let d = t.dists();
                let x2 = d[2.min(d.len() - 1)];
                let (av2, _) = t.accel_lookup(v, x2, f64::INFINITY);
                let av0 = t.accel_lookup(v, 0.0, f64::INFINITY).0;
                ((av2 * av2 - av0 * av0) / (2.0 * x2)).max(0.0)
            }
        }
    }

    /// Largest deceleration (positive) available at speed `v`.
    ///
    /// Tables: `v / B'(v)` on the braking segment, so that braking at full
    /// force reproduces the table. Flat segments and speeds past the last row
    /// (where the clamped table claims braking costs no extra distance) use a
    /// small slope instead. Floored by the mean deceleration of the lowest
    /// segment so the vehicle can come to rest.
    pub fn decel_bound(&self, v: f64) -> f64 {
        const MIN_SLOPE: f64 = 0.05;
        match &self.dynamics {
            Dynamics::ClosedForm { b_max, .. } => *b_max,
            Dynamics::Tabulated(t) => {
                let b = t.braking();
                let floor = b
                    .iter()
                    .find(|(bv, bd)| *bv > 0.0 && *bd > 0.0)
                    .map(|(bv, bd)| bv * bv / (2.0 * bd))
                    .unwrap_or(1.0);
                let slope = t.braking_slope(v).max(MIN_SLOPE);
                (v / slope).max(floor)
            }
        }
    }

    /// Clips `cmd.accel` to the vehicle's bounds at the current speed and so
    /// that one step of length `dt` keeps the speed inside `[0, v_max]`.
    pub fn clamp_command(&self, state: &VehicleState, cmd: Command, dt: f64) -> Command {
        let v = state.v;
        let mut accel = cmd.accel;
        if accel.is_nan() {
            accel = 0.0;
        }
        accel = accel.clamp(-self.decel_bound(v), self.accel_bound(v));
        accel = accel.min((self.v_max - v) / dt).max(-v / dt);
        Command { accel, ..cmd }
    }

    /// One semi-implicit Euler step.
    pub fn step(&self, state: &VehicleState, cmd: &Command, dt: f64) -> VehicleState {
        debug_assert!(dt > 0.0);
        let v = (state.v + cmd.accel * dt).clamp(0.0, self.v_max);
        VehicleState { s: state.s + v * dt, v, lat: state.lat + cmd.lat_rate * dt, branch: state.branch }
    }

    /// Largest speed `u` for the next step such that braking from `u` after
    /// moving one step still fits in `room`.
    ///
    /// Closed form uses the exact discrete braking distance of the
    /// semi-implicit integrator, `(u + b·dt/2)² / 2b`; tables use the looser
    /// `B(u) + u·dt`.
    pub fn envelope_speed(&self, room: f64, dt: f64) -> f64 {
        if room.is_nan() || room <= 0.0 {
            return 0.0;
        }
        match &self.dynamics {
            Dynamics::ClosedForm { b_max, .. } => {
                ((2.0 * b_max * room).sqrt() - 0.5 * b_max * dt).clamp(0.0, self.v_max)
            }
            Dynamics::Tabulated(_) => {
                let fits = |u: f64| self.brake_distance(u).map(|b| b + u * dt <= room).unwrap_or(false);
                if fits(self.v_max) {
                    return self.v_max;
                }
                let (mut lo, mut hi) = (0.0, self.v_max);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if fits(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }
}

/// Free-function form of [`DynamicsProfile::brake_distance`].
pub fn brake_distance(profile: &DynamicsProfile, v: f64) -> Result<f64> {
    profile.brake_distance(v)
}

pub fn accel_speed(profile: &DynamicsProfile, v: f64, x: f64) -> Result<f64> {
    profile.accel_speed(v, x)
}

pub fn accel_time(profile: &DynamicsProfile, v: f64, x: f64) -> Result<f64> {
    profile.accel_time(v, x)
}

pub fn clamp_command(profile: &DynamicsProfile, state: &VehicleState, cmd: Command, dt: f64) -> Command {
    profile.clamp_command(state, cmd, dt)
}

pub fn step_vehicle(profile: &DynamicsProfile, state: &VehicleState, cmd: &Command, dt: f64) -> VehicleState {
    profile.step(state, cmd, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> DynamicsProfile {
        DynamicsProfile::reference()
    }

    /// Integrates constant-acceleration motion with a fine step; independent
    /// of the closed forms under test.
    fn integrate_until(v0: f64, accel: f64, v_cap: f64, stop: impl Fn(f64, f64) -> bool) -> (f64, f64, f64) {
        let h = 1e-3;
        let (mut t, mut s, mut v) = (0.0, 0.0, v0);
        while !stop(s, v) {
            let v_next = (v + accel * h).clamp(0.0, v_cap);
            s += 0.5 * (v + v_next) * h;
            v = v_next;
            t += h;
            assert!(t < 1e3, "integration ran away");
        }
        (t, s, v)
    }

    #[test]
    fn brake_distance_examples() {
        let p = reference();
        assert_eq!(p.brake_distance(0.0).unwrap(), 0.0);
        assert_eq!(p.brake_distance(4.0).unwrap(), 2.0);
        let (_, s, _) = integrate_until(4.0, -4.0, 10.0, |_, v| v <= 0.0);
        assert!((s - 2.0).abs() < 1e-3, "numeric oracle {s}");
        assert!(p.brake_distance(-1.0).is_err());
    }

    #[test]
    fn accel_speed_and_time_examples() {
        let p = reference();
        assert_eq!(p.accel_speed(3.0, 0.0).unwrap(), 3.0);
        assert!((p.accel_speed(3.0, 4.0).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(p.accel_time(2.0, 0.0).unwrap(), 0.0);
        assert!((p.accel_time(0.0, 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(p.accel_speed(1.0, -1.0).is_err());

        let (t, _, v) = integrate_until(3.0, 2.0, 6.5, |s, _| s >= 4.0);
        assert!((v - 5.0).abs() < 1e-2);
        assert!((t - p.accel_time(3.0, 4.0).unwrap()).abs() < 1e-2);
        let (t, _, _) = integrate_until(0.0, 2.0, 6.5, |s, _| s >= 40.0);
        let expected = 3.25 + (40.0 - 10.5625) / 6.5;
        assert!((t - expected).abs() < 1e-2);
        assert!((p.accel_time(0.0, 40.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn shipped_table_values() {
        let p = DynamicsProfile::preset("lmdrive").unwrap();
        assert_eq!(p.brake_distance(5.0).unwrap(), 2.3);
        assert_eq!(p.accel_speed(0.0, 1.0).unwrap(), 2.3);
        assert_eq!(p.accel_time(2.0, 3.0).unwrap(), 1.0);
        let mile = DynamicsProfile::preset("mile").unwrap();
        assert_eq!(mile.brake_distance(3.0).unwrap(), 1.5);
        assert_eq!(mile.accel_speed(0.0, 1.0).unwrap(), 3.2);
    }

    #[test]
    fn tabulated_tolerates_edges() {
        let p = DynamicsProfile::preset("transfuser").unwrap();
        // capped at v_max even where the table reports more
        assert_eq!(p.accel_speed(4.0, 6.0).unwrap(), 4.0);
        // beyond the last column the vehicle cruises
        // and never covers ground faster than v_max allows
        let t = p.accel_time(4.0, 21.9).unwrap();
        assert!((t - 21.9 / 4.0).abs() < 1e-9, "{t}");
        let p = DynamicsProfile::preset("lmdrive").unwrap();
        assert_eq!(p.brake_distance(6.5).unwrap(), 2.3);
        assert_eq!(p.accel_speed(6.0, 0.0).unwrap(), 6.0);
    }

    #[test]
    fn clamp_examples() {
        let p = reference();
        let st = VehicleState::at(0.0, 5.0);
        assert_eq!(p.clamp_command(&st, Command::accel(9.0), 0.05).accel, 2.0);
        assert_eq!(p.clamp_command(&st, Command::accel(-9.0), 0.05).accel, -4.0);
        let st = VehicleState::at(0.0, 6.5);
        assert_eq!(p.clamp_command(&st, Command::accel(2.0), 0.05).accel, 0.0);
    }

    #[test]
    fn step_examples() {
        let p = reference();
        let s = p.step(&VehicleState::at(0.0, 4.0), &Command::accel(0.0), 0.05);
        assert!((s.s - 0.2).abs() < 1e-12);
        let s = p.step(&VehicleState::at(0.0, 0.1), &Command::accel(-4.0), 0.05);
        assert_eq!((s.v, s.s), (0.0, 0.0));
        let s = p.step(&VehicleState::at(0.0, 0.0), &Command::accel(2.0), 0.05);
        assert!((s.v - 0.1).abs() < 1e-12);
        assert!((s.s - 0.005).abs() < 1e-12);
    }

    #[test]
    fn envelope_speed_respects_room() {
        for p in [reference(), DynamicsProfile::preset("mile").unwrap()] {
            for room in [0.0, 0.3, 1.0, 2.5, 10.0] {
                let u = p.envelope_speed(room, 0.05);
                assert!(p.brake_distance(u).unwrap() <= room + 1e-9);
            }
        }
    }

    #[test]
    fn tracking_the_envelope_never_overruns() {
        for p in [reference(), DynamicsProfile::preset("mile").unwrap()] {
            for (v0, room) in [(6.5f64, 5.3), (4.0, 2.0), (0.3, 0.02), (2.0, 40.0)] {
                let obstacle = room;
                let mut st = VehicleState::at(0.0, v0.min(p.envelope_speed(room, 0.05)));
                for _ in 0..2000 {
                    let target = p.envelope_speed(obstacle - st.s, 0.05);
                    let cmd = p.clamp_command(&st, Command::accel((target - st.v) / 0.05), 0.05);
                    st = p.step(&st, &cmd, 0.05);
                    assert!(st.s <= obstacle + 1e-9, "overran {obstacle} from {v0}: {}", st.s);
                }
                assert!(obstacle - st.s < 0.5, "stopped too early: {}", st.s);
            }
        }
    }

    #[test]
    fn tabulated_bounds_are_positive() {
        for name in ["interfuser", "transfuser", "lmdrive", "mile"] {
            let p = DynamicsProfile::preset(name).unwrap();
            for v in [0.0, 0.5, 1.0, 3.3, 4.0, 6.5] {
                assert!(p.accel_bound(v) >= 0.0);
                assert!(p.decel_bound(v) > 0.0, "{name} at {v}");
            }
        }
    }
}
