//! Critical values, criticality order, grids and boundary refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::DynamicsProfile;
use crate::policy::{arriving_requirement, caution_feasible, progress_feasible};
use crate::world::{ConfigType, ContextParams, ABSENT};

/// Maps the absent sentinel to infinity.
pub(crate) fn effective(x: f64) -> f64 {
    if x >= ABSENT {
        f64::INFINITY
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub ctx: ContextParams,
    pub v_e: f64,
    pub x_e: f64,
    /// Arriving distance to its zone; [`ABSENT`] when there is none.
    pub x_a: f64,
    /// Front vehicle distance past the zone exit; [`ABSENT`] when there is none.
    pub x_f: f64,
}

impl TestCase {
    /// Test case with `x_e = B(v_e)`.
    pub fn new(ctx: ContextParams, dyn_: &DynamicsProfile, v_e: f64, x_a: f64, x_f: f64) -> Result<Self> {
        let x_e = dyn_.brake_distance(v_e)?;
        let tc = Self { ctx, v_e, x_e, x_a, x_f };
        tc.validate(dyn_)?;
        Ok(tc)
    }

    pub fn validate(&self, dyn_: &DynamicsProfile) -> Result<()> {
        self.ctx.validate()?;
        if !(self.v_e >= 0.0 && self.v_e <= dyn_.v_max() + 1e-9) {
            return Err(Error::domain(format!("v_e must lie in [0, {}], got {}", dyn_.v_max(), self.v_e)));
        }
        for (name, v) in [("x_e", self.x_e), ("x_a", self.x_a), ("x_f", self.x_f)] {
            if !(v >= 0.0) {
                return Err(Error::domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn has_arriving(&self) -> bool {
        self.ctx.config_type.has_arriving() && self.x_a < ABSENT
    }

    pub fn has_front(&self) -> bool {
        self.x_f < ABSENT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub x_e_hat: f64,
    pub x_a_hat: Option<f64>,
    pub x_f_hat: Option<f64>,
    pub feasible: bool,
}

pub fn critical_values(ctx: &ContextParams, dyn_: &DynamicsProfile, v_e: f64) -> Result<CriticalValues> {
    if !(v_e >= 0.0 && v_e <= dyn_.v_max() + 1e-9) {
        return Err(Error::domain(format!("v_e must lie in [0, {}], got {v_e}", dyn_.v_max())));
    }
    let x_e_hat = dyn_.brake_distance(v_e)?;
    let run = x_e_hat + ctx.cd;
    let unset = CriticalValues { x_e_hat, x_a_hat: None, x_f_hat: None, feasible: false };
    let (Ok(t_exit), Ok(v_exit)) = (dyn_.accel_time(v_e, run), dyn_.accel_speed(v_e, run)) else {
        return Ok(unset);
    };
    let x_f_hat = dyn_.brake_distance(v_exit)?;
    let x_a_hat = match ctx.config_type {
        ConfigType::CrossLight => None,
        _ => arriving_requirement(ctx, dyn_, t_exit),
    };
    let feasible = progress_feasible(ctx, dyn_, v_e, x_e_hat, x_a_hat.unwrap_or(f64::INFINITY), x_f_hat);
    Ok(CriticalValues { x_e_hat, x_a_hat, x_f_hat: Some(x_f_hat), feasible })
}

/// Some policy can avoid all collisions and rule violations.
pub fn is_potentially_safe(tc: &TestCase, dyn_: &DynamicsProfile) -> bool {
    caution_feasible(dyn_, tc.v_e, tc.x_e)
        || progress_feasible(&tc.ctx, dyn_, tc.v_e, tc.x_e, effective(tc.x_a), effective(tc.x_f))
}

/// `tc1` is at least as critical as `tc2`: both distances are no larger.
pub fn more_critical(tc1: &TestCase, tc2: &TestCase) -> Result<bool> {
    if tc1.ctx != tc2.ctx || tc1.v_e != tc2.v_e || tc1.x_e != tc2.x_e {
        return Err(Error::contract("criticality is only defined for equal context, v_e and x_e"));
    }
    Ok(tc1.x_a <= tc2.x_a && tc1.x_f <= tc2.x_f)
}

/// Rounds a critical value up to the next 0.1 m so the inserted cell stays
/// on the feasible side.
pub fn round_up_tenth(x: f64) -> f64 {
    ((x * 10.0 - 1e-7).ceil() / 10.0).max(0.0)
}

/// `start, start+step, ...` up to and including `stop`.
pub fn range_values(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::config(format!("bad range start={start} stop={stop} step={step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err(Error::config("range has too many values"));
    }
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e6).round() / 1e6).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_a_values: Vec<f64>,
    pub x_f_values: Vec<f64>,
    pub repeats: u32,
    pub include_critical: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_a_values: range_values(0.0, 40.0, 5.0).expect("valid"),
            x_f_values: range_values(0.0, 520.0, 40.0).expect("valid"),
            repeats: 5,
            include_critical: true,
        }
    }
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("grid.repeats must be at least 1"));
        }
        if self.x_f_values.is_empty() {
            return Err(Error::config("grid.xf must not be empty"));
        }
        if let Some(v) = self.x_a_values.iter().chain(&self.x_f_values).find(|v| !(**v >= 0.0)) {
            return Err(Error::config(format!("grid values must be non-negative, got {v}")));
        }
        Ok(())
    }
}

/// Cartesian test grid, row-major over `x_a_values` x `x_f_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub v_e: f64,
    pub critical: CriticalValues,
    pub x_a_values: Vec<f64>,
    pub x_f_values: Vec<f64>,
    pub repeats: u32,
    pub cases: Vec<TestCase>,
}

impl Grid {
    pub fn case(&self, row: usize, col: usize) -> &TestCase {
        &self.cases[row * self.x_f_values.len() + col]
    }
}

pub fn build_grid(ctx: &ContextParams, dyn_: &DynamicsProfile, v_e: f64, spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let critical = critical_values(ctx, dyn_, v_e)?;
    let mut x_a = if ctx.config_type.has_arriving() { spec.x_a_values.clone() } else { Vec::new() };
    let mut x_f = spec.x_f_values.clone();
    if spec.include_critical && critical.feasible {
        if let (Some(a), false) = (critical.x_a_hat, x_a.is_empty()) {
            x_a.push(round_up_tenth(a));
        }
        if let Some(f) = critical.x_f_hat {
            x_f.push(round_up_tenth(f));
        }
    }
    sort_dedup(&mut x_a);
    sort_dedup(&mut x_f);
    if x_a.is_empty() {
        x_a.push(ABSENT);
    }
    let mut cases = Vec::with_capacity(x_a.len() * x_f.len());
    for &a in &x_a {
        for &f in &x_f {
            cases.push(TestCase::new(ctx.clone(), dyn_, v_e, a, f)?);
        }
    }
    Ok(Grid { v_e, critical, x_a_values: x_a, x_f_values: x_f, repeats: spec.repeats, cases })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Xa,
    Xf,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xa" | "x_a" => Ok(Axis::Xa),
            "xf" | "x_f" => Ok(Axis::Xf),
            other => Err(Error::config(format!("unknown axis `{other}` (expected xa or xf)"))),
        }
    }
}

/// Coarse verdict class seen by the refiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Caution,
    Progress,
    /// Accidents, route faults, blockages or disagreeing repeats.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
    pub probes: Vec<Probe>,
}

/// Bisects the caution/progress boundary along `axis`, keeping the other
/// coordinates of `base`. `runner` simulates one test case.
pub fn refine_boundary<F>(base: &TestCase, axis: Axis, lo: f64, hi: f64, tol: f64, mut runner: F) -> Result<Refinement>
where
    F: FnMut(&TestCase) -> Result<Phase>,
{
    if !(tol > 0.0) || !(lo <= hi) || lo < 0.0 {
        return Err(Error::domain(format!("need 0 <= lo <= hi and tol > 0, got lo={lo} hi={hi} tol={tol}")));
    }
    if axis == Axis::Xa && !base.ctx.config_type.has_arriving() {
        return Err(Error::contract(format!("no arriving vehicle in a {} context", base.ctx.config_type)));
    }
    let mut probes = Vec::new();
    let mut probe = |value: f64, probes: &mut Vec<Probe>| -> Result<Phase> {
        let mut tc = base.clone();
        match axis {
            Axis::Xa => tc.x_a = value,
            Axis::Xf => tc.x_f = value,
        }
        let phase = runner(&tc)?;
        probes.push(Probe { value, phase });
        Ok(phase)
    };
    if hi - lo <= 0.0 {
        return Ok(Refinement { axis, lo, hi, probes });
    }
    let (mut lo, mut hi) = (lo, hi);
    if probe(lo, &mut probes)? != Phase::Caution || probe(hi, &mut probes)? != Phase::Progress {
        return Err(Error::UnstableBoundary(probes));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut probes)? {
            Phase::Caution => lo = mid,
            Phase::Progress => hi = mid,
            Phase::Other => return Err(Error::UnstableBoundary(probes)),
        }
    }
    Ok(Refinement { axis, lo, hi, probes })
}
