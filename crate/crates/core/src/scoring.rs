//! Leaderboard-style quantitative scoring: `Sc = 100 · R · P` with
//! `P = Π p_i^n_i` over recorded incidents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Branch;
use crate::oracle::{CellResult, RouteFaultKind, SafetyProp, Verdict};
use crate::sim::{EndReason, Event, Trace};
use crate::world::Agent;

pub const PEDESTRIAN: &str = "pedestrian_collision";
pub const VEHICLE: &str = "vehicle_collision";
pub const STATIC: &str = "static_collision";
pub const RED_LIGHT: &str = "red_light";
pub const STOP_SIGN: &str = "stop_sign";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PenaltyTable(pub BTreeMap<String, f64>);

impl Default for PenaltyTable {
    fn default() -> Self {
        Self(
            [(PEDESTRIAN, 0.50), (VEHICLE, 0.60), (STATIC, 0.65), (RED_LIGHT, 0.70), (STOP_SIGN, 0.80)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        )
    }
}

impl PenaltyTable {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.0 {
            if !(*v > 0.0 && *v <= 1.0) {
                return Err(Error::Scoring(format!("penalty for `{k}` must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, kind: &str) -> Result<f64> {
        self.0.get(kind).copied().ok_or_else(|| Error::Scoring(format!("unknown incident type `{kind}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Failure {
    RouteChange,
    Blockage,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IncidentLedger {
    #[serde(rename = "R")]
    pub r: f64,
    pub failure: Option<Failure>,
    pub incidents: BTreeMap<String, u32>,
    /// Subset of `incidents` caused by another agent.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub caused_by_other: BTreeMap<String, u32>,
}

impl IncidentLedger {
    pub fn new(r: f64) -> Self {
        Self { r, ..Self::default() }
    }

    pub fn with(mut self, kind: &str, n: u32) -> Self {
        *self.incidents.entry(kind.to_string()).or_default() += n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Scoring(format!("R must be in [0, 1], got {}", self.r)));
        }
        for (k, n) in &self.caused_by_other {
            if self.incidents.get(k).copied().unwrap_or(0) < *n {
                return Err(Error::Scoring(format!("more `{k}` incidents attributed to others than recorded")));
            }
        }
        Ok(())
    }

    /// Incident counts, optionally without those caused by other agents.
    pub fn counted(&self, exclude_other: bool) -> BTreeMap<String, u32> {
        let mut out = self.incidents.clone();
        if exclude_other {
            for (k, n) in &self.caused_by_other {
                if let Some(c) = out.get_mut(k) {
                    *c = c.saturating_sub(*n);
                }
            }
        }
        out
    }

    /// Combined ledger: incidents add up, the lower completion wins.
    pub fn merge(&self, other: &IncidentLedger) -> IncidentLedger {
        let mut out = self.clone();
        for (k, n) in &other.incidents {
            *out.incidents.entry(k.clone()).or_default() += n;
        }
        for (k, n) in &other.caused_by_other {
            *out.caused_by_other.entry(k.clone()).or_default() += n;
        }
        out.r = self.r.min(other.r);
        out.failure = self.failure.or(other.failure);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let l: Self = serde_json::from_str(text)?;
        l.validate()?;
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    #[serde(rename = "Sc")]
    pub sc: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "P")]
    pub p: f64,
    /// `p_i^n_i` per incident type.
    pub contributions: BTreeMap<String, f64>,
}

fn penalty_of(counts: &BTreeMap<String, u32>, table: &PenaltyTable) -> Result<(f64, BTreeMap<String, f64>)> {
    let mut p = 1.0;
    let mut parts = BTreeMap::new();
    for (k, n) in counts {
        let factor = table.coefficient(k)?.powi(*n as i32);
        p *= factor;
        parts.insert(k.clone(), factor);
    }
    Ok((p, parts))
}

pub fn penalty(ledger: &IncidentLedger, table: &PenaltyTable) -> Result<f64> {
    Ok(penalty_of(&ledger.incidents, table)?.0)
}

pub fn score(ledger: &IncidentLedger, table: &PenaltyTable) -> Result<Score> {
    score_with(ledger, table, false)
}

/// As [`score`]; `exclude_other` drops incidents caused by other agents.
pub fn score_with(ledger: &IncidentLedger, table: &PenaltyTable, exclude_other: bool) -> Result<Score> {
    ledger.validate()?;
    let (p, contributions) = penalty_of(&ledger.counted(exclude_other), table)?;
    Ok(Score { sc: 100.0 * ledger.r * p, r: ledger.r, p, contributions })
}

/// Incidents, completion and failure kind of one classified run.
pub fn ledger_from_trace(trace: &Trace, verdict: &Verdict) -> IncidentLedger {
    let l = &trace.layout;
    let mut ledger = IncidentLedger::default();
    match verdict {
        Verdict::Ae | Verdict::Af => ledger = ledger.with(VEHICLE, 1),
        Verdict::Aa => {
            ledger = ledger.with(VEHICLE, 1);
            ledger.caused_by_other.insert(VEHICLE.to_string(), 1);
        }
        _ => {}
    }
    if verdict.props().is_some_and(|p| p.contains(&SafetyProp::P3)) {
        ledger = ledger.with(RED_LIGHT, 1);
    }

    // progress along the assigned route only
    let branch_s = trace.events.iter().find_map(|e| match e {
        Event::BranchTaken { vehicle: Agent::Ego, t, .. } => {
            trace.snapshots.iter().find(|s| (s.t - t).abs() < 1e-9).map(|s| s.ego.s)
        }
        _ => None,
    });
    let last = trace.snapshots.last().map_or(l.ego_start, |s| s.ego.s);
    let reached = branch_s.unwrap_or(last);
    let on_route = trace.snapshots.last().map_or(true, |s| s.ego.branch == Branch::Assigned);
    let completed = on_route && matches!(trace.end, EndReason::RouteComplete | EndReason::Settled) && trace.ego_exited();
    ledger.r = if completed { 1.0 } else { ((reached - l.ego_start) / l.route_length()).clamp(0.0, 1.0) };

    ledger.failure = match verdict {
        Verdict::Blk => Some(Failure::Blockage),
        Verdict::RouteFault { kind, .. } if *kind != RouteFaultKind::DeviatedRoad => Some(Failure::RouteChange),
        _ if trace.end == EndReason::Timeout && !completed => Some(Failure::Timeout),
        _ => None,
    };
    ledger
}

/// Scores of every run in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEvaluation {
    pub result: CellResult,
    pub ledgers: Vec<IncidentLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub verdicts: String,
    pub mean_sc: f64,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub threshold: f64,
    pub exclude_other: bool,
    pub cells: Vec<CellComparison>,
    pub mean_sc: f64,
    /// Cells scoring at least `threshold` despite an unsafe verdict.
    pub masking: usize,
    /// Cells scoring below `threshold` although every verdict is safe.
    pub converse: usize,
}

pub fn compare_evaluations(
    cells: &[CellEvaluation],
    table: &PenaltyTable,
    threshold: f64,
    exclude_other: bool,
) -> Result<Comparison> {
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        if cell.ledgers.is_empty() {
            return Err(Error::Scoring("cell without ledgers".into()));
        }
        let mut sum = 0.0;
        for l in &cell.ledgers {
            sum += score_with(l, table, exclude_other)?.sc;
        }
        out.push(CellComparison {
            verdicts: cell.result.to_string(),
            mean_sc: sum / cell.ledgers.len() as f64,
            safe: cell.result.all_safe(),
        });
    }
    let mean_sc = if out.is_empty() { 0.0 } else { out.iter().map(|c| c.mean_sc).sum::<f64>() / out.len() as f64 };
    let masking = out.iter().filter(|c| !c.safe && c.mean_sc >= threshold).count();
    let converse = out.iter().filter(|c| c.safe && c.mean_sc < threshold).count();
    Ok(Comparison { threshold, exclude_other, cells: out, mean_sc, masking, converse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{aggregate_cell, fixtures};
    use proptest::prelude::*;

    #[test]
    fn penalty_examples() {
        let t = PenaltyTable::default();
        assert_eq!(penalty(&IncidentLedger::new(1.0), &t).unwrap(), 1.0);
        assert_eq!(penalty(&IncidentLedger::new(1.0).with(VEHICLE, 1), &t).unwrap(), 0.60);
        let l = IncidentLedger::new(0.85).with(PEDESTRIAN, 1).with(RED_LIGHT, 2);
        assert!((penalty(&l, &t).unwrap() - 0.245).abs() < 1e-12);
        assert!((score(&l, &t).unwrap().sc - 20.825).abs() < 1e-9);
        assert_eq!(score(&IncidentLedger::new(1.0), &t).unwrap().sc, 100.0);
        assert_eq!(score(&IncidentLedger::new(0.0).with(VEHICLE, 3), &t).unwrap().sc, 0.0);
        assert!(matches!(penalty(&IncidentLedger::new(1.0).with("meteor", 1), &t), Err(Error::Scoring(_))));
    }

    #[test]
    fn ledger_json_shape() {
        let l = IncidentLedger::from_json(r#"{ "R": 0.5, "failure": "Blockage", "incidents": {"red_light": 1} }"#).unwrap();
        assert_eq!(l.failure, Some(Failure::Blockage));
        let back: serde_json::Value = serde_json::from_str(&l.to_json().unwrap()).unwrap();
        assert_eq!(back["R"], 0.5);
        assert_eq!(back["incidents"]["red_light"], 1);
        assert!(IncidentLedger::from_json(r#"{ "R": 1.5, "failure": null, "incidents": {} }"#).is_err());
    }

    #[test]
    fn fixture_ledgers() {
        let t = PenaltyTable::default();
        for f in fixtures::all() {
            let v: Verdict = f.label.parse().unwrap();
            let v = match v {
                Verdict::PU(_) | Verdict::CU(_) => {
                    crate::oracle::classify(&f.trace, &f.tc, &f.analysis, &Default::default()).unwrap()
                }
                other => other,
            };
            let l = ledger_from_trace(&f.trace, &v);
            let expect: BTreeMap<String, u32> = f.incidents.iter().map(|(k, n)| (k.to_string(), *n)).collect();
            assert_eq!(l.incidents, expect, "{}", f.name);
            assert_eq!(l.failure.map(|x| format!("{x:?}")), f.failure.map(str::to_string), "{}", f.name);
            match f.name {
                "empty_road" => assert_eq!(l.r, 1.0),
                "enter_on_red" => assert_eq!(score(&l, &t).unwrap().sc, 70.0),
                "mutual_block" => {
                    let layout = &f.trace.layout;
                    let expect = (f.tc.x_e + layout.cd / 2.0) / (f.tc.x_e + layout.cd + layout.runout);
                    assert!((l.r - expect).abs() < 1e-12);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn comparison_examples() {
        let t = PenaltyTable::default();
        let ps = CellEvaluation { result: aggregate_cell(&vec![Verdict::PS; 5]).unwrap(), ledgers: vec![IncidentLedger::new(1.0); 5] };
        let c = compare_evaluations(&[ps.clone(), ps], &t, 50.0, false).unwrap();
        assert_eq!((c.mean_sc, c.masking, c.converse), (100.0, 0, 0));

        let mut aa = IncidentLedger::new(1.0).with(VEHICLE, 1);
        aa.caused_by_other.insert(VEHICLE.into(), 1);
        let mut ledgers = vec![aa; 4];
        ledgers.push(IncidentLedger::new(1.0));
        let verdicts = [Verdict::Aa, Verdict::Aa, Verdict::Aa, Verdict::Aa, Verdict::CS];
        let cell = CellEvaluation { result: aggregate_cell(&verdicts).unwrap(), ledgers };
        let with = compare_evaluations(std::slice::from_ref(&cell), &t, 90.0, true).unwrap();
        assert_eq!(with.cells[0].mean_sc, 100.0);
        assert_eq!(with.masking, 1);
        let without = compare_evaluations(&[cell], &t, 90.0, false).unwrap();
        assert_eq!(without.masking, 0);

        let red = IncidentLedger::new(1.0).with(RED_LIGHT, 1);
        let pu3 = Verdict::PU([SafetyProp::P3].into());
        let cell = CellEvaluation { result: aggregate_cell(&vec![pu3; 5]).unwrap(), ledgers: vec![red; 5] };
        assert!((compare_evaluations(&[cell], &t, 50.0, false).unwrap().cells[0].mean_sc - 70.0).abs() < 1e-9);
    }

    fn ledger_strategy() -> impl Strategy<Value = IncidentLedger> {
        (0.0f64..=1.0, proptest::collection::vec((0usize..5, 0u32..4), 0..6)).prop_map(|(r, items)| {
            let keys = [PEDESTRIAN, VEHICLE, STATIC, RED_LIGHT, STOP_SIGN];
            items.into_iter().fold(IncidentLedger::new(r), |l, (k, n)| l.with(keys[k], n))
        })
    }

    proptest! {
        #[test]
        fn penalty_is_multiplicative(a in ledger_strategy(), b in ledger_strategy()) {
            let t = PenaltyTable::default();
            let joint = penalty(&a.merge(&b), &t).unwrap();
            let split = penalty(&a, &t).unwrap() * penalty(&b, &t).unwrap();
            prop_assert!((joint - split).abs() <= 1e-12);
        }

        #[test]
        fn incidents_never_raise_the_score(l in ledger_strategy(), k in 0usize..5, dr in 0.0f64..1.0) {
            let t = PenaltyTable::default();
            let keys = [PEDESTRIAN, VEHICLE, STATIC, RED_LIGHT, STOP_SIGN];
            let base = score(&l, &t).unwrap();
            prop_assert!(score(&l.clone().with(keys[k], 1), &t).unwrap().sc <= base.sc);
            let mut more = l.clone();
            more.r = (l.r + dr).min(1.0);
            prop_assert!(score(&more, &t).unwrap().sc >= base.sc);
            prop_assert!((base.sc - 100.0 * base.r * base.p).abs() <= 1e-9);
        }
    }
}
