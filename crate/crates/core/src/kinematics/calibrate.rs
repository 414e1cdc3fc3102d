//! Empirical estimation of A/D functions from simulated runs.

use super::{Command, DynamicsProfile, VehicleState};
use crate::error::{Error, Result};

/// Obstacles farther than this are not scanned.
pub const MAX_OBSTACLE_DISTANCE: f64 = 500.0;

/// Something that can replay the two calibration scenarios.
pub trait CalibrationRunner {
    /// Starts at speed `v` with a static obstacle `obstacle` metres ahead and
    /// reports whether the vehicle hits it.
    fn collides(&mut self, v: f64, obstacle: f64) -> bool;

    /// Starts at speed `v` on a clear road and returns the simulated time and
    /// speed at the first step where the travelled distance reaches `x`.
    fn drive(&mut self, v: f64, x: f64) -> Option<(f64, f64)>;
}

/// Smallest obstacle distance at which the vehicle stops without collision.
///
/// Scans forward in `scan_step` increments from 0, then bisects between the
/// last unsafe and first safe distance down to `tol`.
pub fn estimate_braking<R: CalibrationRunner + ?Sized>(runner: &mut R, v: f64, scan_step: f64, tol: f64) -> Result<f64> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::domain(format!("speed must be non-negative, got {v}")));
    }
    if !(tol > 0.0 && scan_step > tol) {
        return Err(Error::domain(format!("need scan_step > tol > 0, got step={scan_step}, tol={tol}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = loop {
        let x = lo + scan_step;
        if x > MAX_OBSTACLE_DISTANCE {
            return Err(Error::ObstacleUnavoidable(format!("no safe stop from {v} m/s within {MAX_OBSTACLE_DISTANCE} m")));
        }
        if !runner.collides(v, x) {
            break x;
        }
        lo = x;
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if runner.collides(v, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Empirical `(AT, AV)` for accelerating from `v` over `x`.
pub fn estimate_accel_profile<R: CalibrationRunner + ?Sized>(runner: &mut R, v: f64, x: f64) -> Result<(f64, f64)> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("distance must be non-negative, got {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, v));
    }
    runner
        .drive(v, x)
        .ok_or_else(|| Error::Unreachable(format!("distance {x} m not reached from {v} m/s within the horizon")))
}

/// Calibration rig with an ideal driver: full braking in the obstacle
/// scenario, full throttle on the clear road.
#[derive(Debug, Clone)]
pub struct IdealRig {
    pub profile: DynamicsProfile,
    pub dt: f64,
    pub horizon: f64,
}

impl IdealRig {
    pub fn new(profile: DynamicsProfile, dt: f64) -> Self {
        Self { profile, dt, horizon: 120.0 }
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).ceil() as usize
    }
}

impl CalibrationRunner for IdealRig {
    fn collides(&mut self, v: f64, obstacle: f64) -> bool {
        let mut st = VehicleState::at(0.0, v.min(self.profile.v_max()));
        for _ in 0..self.steps() {
            if st.s >= obstacle {
                return true;
            }
            if st.v == 0.0 {
                return false;
            }
            let cmd = self.profile.clamp_command(&st, Command::accel(f64::NEG_INFINITY), self.dt);
            st = self.profile.step(&st, &cmd, self.dt);
        }
        st.s >= obstacle
    }

    fn drive(&mut self, v: f64, x: f64) -> Option<(f64, f64)> {
        let mut st = VehicleState::at(0.0, v.min(self.profile.v_max()));
        for k in 1..=self.steps() {
            let cmd = self.profile.clamp_command(&st, Command::accel(f64::INFINITY), self.dt);
            st = self.profile.step(&st, &cmd, self.dt);
            if st.s >= x {
                return Some((k as f64 * self.dt, st.v));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn braking_matches_closed_form() {
        let mut rig = IdealRig::new(DynamicsProfile::reference(), 0.05);
        let b = estimate_braking(&mut rig, 4.0, 0.5, 0.01).unwrap();
        assert!((b - 2.0).abs() <= 0.01 + 4.0 * 0.05, "{b}");
        assert_eq!(estimate_braking(&mut rig, 0.0, 0.5, 0.01).unwrap(), 0.0);
        let b5 = estimate_braking(&mut rig, 5.0, 0.5, 0.01).unwrap();
        assert!(b5 >= b);
    }

    #[test]
    fn accel_profile_matches_closed_form() {
        let mut rig = IdealRig::new(DynamicsProfile::reference(), 0.05);
        assert_eq!(estimate_accel_profile(&mut rig, 2.0, 0.0).unwrap(), (0.0, 2.0));
        let (t, v) = estimate_accel_profile(&mut rig, 0.0, 4.0).unwrap();
        assert!((t - 2.0).abs() <= 0.05 + 1e-9);
        assert!((v - 4.0).abs() < 0.15);
        let (t, _) = estimate_accel_profile(&mut rig, 0.0, 40.0).unwrap();
        assert!((t - 7.779).abs() <= 0.05, "{t}");
    }

    #[test]
    fn parameters_are_validated() {
        let mut rig = IdealRig::new(DynamicsProfile::reference(), 0.05);
        assert!(estimate_braking(&mut rig, 1.0, 0.01, 0.5).is_err());
        assert!(estimate_braking(&mut rig, -1.0, 0.5, 0.01).is_err());
        assert!(estimate_accel_profile(&mut rig, 1.0, -2.0).is_err());
    }

    struct NeverStops;
    impl CalibrationRunner for NeverStops {
        fn collides(&mut self, _: f64, _: f64) -> bool {
            true
        }
        fn drive(&mut self, _: f64, _: f64) -> Option<(f64, f64)> {
            None
        }
    }

    #[test]
    fn failures_surface_as_errors() {
        assert!(matches!(estimate_braking(&mut NeverStops, 3.0, 0.5, 0.01), Err(Error::ObstacleUnavoidable(_))));
        assert!(matches!(estimate_accel_profile(&mut NeverStops, 3.0, 1.0), Err(Error::Unreachable(_))));
    }
}
