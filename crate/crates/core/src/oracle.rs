//! Verdicts and safety properties over simulated traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{effective, CriticalValues, Phase, TestCase};
use crate::kinematics::Branch;
use crate::sim::{Event, SimConfig, Snapshot, Trace};
use crate::world::{in_zone, Agent, ConfigType, LightPhase};

pub mod fixtures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyProp {
    /// Two vehicles in the zone at once.
    P1,
    /// Ego stopped inside the zone.
    P2,
    /// Ego entered on red.
    P3,
    /// Ego in the zone while the side light is green.
    P4,
}

impl SafetyProp {
    pub const ALL: [SafetyProp; 4] = [SafetyProp::P1, SafetyProp::P2, SafetyProp::P3, SafetyProp::P4];

    pub fn as_str(self) -> &'static str {
        match self {
            SafetyProp::P1 => "p1",
            SafetyProp::P2 => "p2",
            SafetyProp::P3 => "p3",
            SafetyProp::P4 => "p4",
        }
    }

    pub fn evaluable(self, config_type: ConfigType) -> bool {
        matches!(self, SafetyProp::P1 | SafetyProp::P2) || config_type == ConfigType::CrossLight
    }
}

pub type PropSet = BTreeSet<SafetyProp>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subject {
    Ego,
    Arriving,
    Both,
}

impl Subject {
    fn suffix(self) -> &'static str {
        match self {
            Subject::Ego => "e",
            Subject::Arriving => "a",
            Subject::Both => "ea",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteFaultKind {
    ChangedRoute,
    DeviatedRoad,
    ChangedThenDeviated,
}

impl RouteFaultKind {
    fn prefix(self) -> &'static str {
        match self {
            RouteFaultKind::ChangedRoute => "CR",
            RouteFaultKind::DeviatedRoad => "DR",
            RouteFaultKind::ChangedThenDeviated => "CDR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Verdict {
    CS,
    CO,
    PS,
    PU(PropSet),
    CU(PropSet),
    Ae,
    Aa,
    Af,
    Blk,
    /// Props violated alongside the fault are kept but not encoded.
    RouteFault { subject: Subject, kind: RouteFaultKind, props: PropSet },
}

impl Verdict {
    /// Accident > Blk > RouteFault > PU > CU > PS > CO > CS.
    pub fn severity(&self) -> u8 {
        match self {
            Verdict::Ae | Verdict::Aa | Verdict::Af => 7,
            Verdict::Blk => 6,
            Verdict::RouteFault { .. } => 5,
            Verdict::PU(_) => 4,
            Verdict::CU(_) => 3,
            Verdict::PS => 2,
            Verdict::CO => 1,
            Verdict::CS => 0,
        }
    }

    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::CS | Verdict::CO | Verdict::PS)
    }

    pub fn is_accident(&self) -> bool {
        matches!(self, Verdict::Ae | Verdict::Aa | Verdict::Af)
    }

    pub fn props(&self) -> Option<&PropSet> {
        match self {
            Verdict::PU(p) | Verdict::CU(p) => Some(p),
            Verdict::RouteFault { props, .. } => Some(props),
            _ => None,
        }
    }

    /// Coarse class used by boundary refinement.
    pub fn phase(&self) -> Phase {
        match self {
            Verdict::CS | Verdict::CO | Verdict::CU(_) => Phase::Caution,
            Verdict::PS | Verdict::PU(_) => Phase::Progress,
            _ => Phase::Other,
        }
    }

    /// Palette role for heatmaps.
    pub fn role(&self) -> &'static str {
        match self {
            Verdict::PS => "safe",
            Verdict::CS | Verdict::CO => "caution",
            Verdict::PU(_) | Verdict::CU(_) => "violation",
            Verdict::Ae | Verdict::Aa | Verdict::Af => "accident",
            Verdict::RouteFault { .. } => "route_fault",
            Verdict::Blk => "blockage",
        }
    }
}

fn fmt_props(f: &mut fmt::Formatter<'_>, tag: &str, props: &PropSet) -> fmt::Result {
    f.write_str(tag)?;
    f.write_str("[")?;
    for p in props {
        f.write_str(p.as_str())?;
    }
    f.write_str("]")
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::CS => f.write_str("CS"),
            Verdict::CO => f.write_str("CO"),
            Verdict::PS => f.write_str("PS"),
            Verdict::PU(p) => fmt_props(f, "PU", p),
            Verdict::CU(p) => fmt_props(f, "CU", p),
            Verdict::Ae => f.write_str("Ae"),
            Verdict::Aa => f.write_str("Aa"),
            Verdict::Af => f.write_str("Af"),
            Verdict::Blk => f.write_str("Blk"),
            Verdict::RouteFault { subject, kind, .. } => write!(f, "{}{}", kind.prefix(), subject.suffix()),
        }
    }
}

fn parse_props(body: &str) -> Option<PropSet> {
    let inner = body.strip_prefix('[')?.strip_suffix(']')?;
    if inner.is_empty() || inner.len() % 2 != 0 {
        return None;
    }
    let mut set = PropSet::new();
    for chunk in inner.as_bytes().chunks(2) {
        let p = match chunk {
            b"p1" => SafetyProp::P1,
            b"p2" => SafetyProp::P2,
            b"p3" => SafetyProp::P3,
            b"p4" => SafetyProp::P4,
            _ => return None,
        };
        set.insert(p);
    }
    Some(set)
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Classification(format!("unknown verdict `{s}`"));
        let simple = match s {
            "CS" => Some(Verdict::CS),
            "CO" => Some(Verdict::CO),
            "PS" => Some(Verdict::PS),
            "Ae" => Some(Verdict::Ae),
            "Aa" => Some(Verdict::Aa),
            "Af" => Some(Verdict::Af),
            "Blk" => Some(Verdict::Blk),
            _ => None,
        };
        if let Some(v) = simple {
            return Ok(v);
        }
        if let Some(rest) = s.strip_prefix("PU") {
            return parse_props(rest).map(Verdict::PU).ok_or_else(bad);
        }
        if let Some(rest) = s.strip_prefix("CU") {
            return parse_props(rest).map(Verdict::CU).ok_or_else(bad);
        }
        let (kind, rest) = if let Some(r) = s.strip_prefix("CDR") {
            (RouteFaultKind::ChangedThenDeviated, r)
        } else if let Some(r) = s.strip_prefix("CR") {
            (RouteFaultKind::ChangedRoute, r)
        } else if let Some(r) = s.strip_prefix("DR") {
            (RouteFaultKind::DeviatedRoad, r)
        } else {
            return Err(bad());
        };
        let subject = match rest {
            "e" => Subject::Ego,
            "a" => Subject::Arriving,
            "ea" => Subject::Both,
            _ => return Err(bad()),
        };
        Ok(Verdict::RouteFault { subject, kind, props: PropSet::new() })
    }
}

impl Serialize for Verdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// First time `pos` rises above `threshold`, interpolated between snapshots.
fn crossing_time<F: Fn(&Snapshot) -> Option<f64>>(snaps: &[Snapshot], pos: F, threshold: f64) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for snap in snaps {
        let Some(p) = pos(snap) else {
            prev = None;
            continue;
        };
        if p > threshold {
            return Some(match prev {
                Some((t0, p0)) if p0 <= threshold => t0 + (threshold - p0) / (p - p0) * (snap.t - t0),
                _ => snap.t,
            });
        }
        prev = Some((snap.t, p));
    }
    None
}

/// Continuous-time zone occupancy `(entry, exit)` of `agent`. The arriving
/// vehicle occupies the conflict from `arriving_reserve` before its zone.
fn occupancy(trace: &Trace, agent: Agent) -> Option<(f64, f64)> {
    let l = &trace.layout;
    let snaps = &trace.snapshots;
    let end = trace.final_t();
    match agent {
        Agent::Ego => {
            let pos = |s: &Snapshot| (s.ego.branch == Branch::Assigned).then_some(s.ego.s);
            let entry = crossing_time(snaps, pos, 0.0)?;
            Some((entry, crossing_time(snaps, pos, l.cd).unwrap_or(end)))
        }
        Agent::Arriving => {
            let pos = |s: &Snapshot| s.arriving.map(|a| a.s);
            let entry = crossing_time(snaps, pos, -l.arriving_reserve)?;
            Some((entry, crossing_time(snaps, pos, l.cd_a).unwrap_or(end)))
        }
        Agent::Front => None,
    }
}

/// Whether `p` is violated in `trace`.
pub fn check_property(p: SafetyProp, trace: &Trace) -> Result<bool> {
    let l = &trace.layout;
    if !p.evaluable(l.config_type) {
        return Err(Error::contract(format!("{} is not defined in a {} context", p.as_str(), l.config_type)));
    }
    Ok(match p {
        SafetyProp::P1 => match (occupancy(trace, Agent::Ego), occupancy(trace, Agent::Arriving)) {
            (Some((e_in, e_out)), Some((a_in, a_out))) => e_in.max(a_in) < e_out.min(a_out) - 1e-9,
            _ => false,
        },
        SafetyProp::P2 => trace.stalls(Agent::Ego).any(|(t0, t1)| {
            trace
                .snapshots
                .iter()
                .filter(|s| s.t >= t0 - 1e-9 && s.t <= t1 + 1e-9)
                .all(|s| in_zone(l, Agent::Ego, &s.ego))
        }),
        SafetyProp::P3 => trace.events.iter().any(|e| match e {
            Event::ZoneEntry { vehicle: Agent::Ego, t } => snapshot_at(trace, *t)
                .and_then(|s| s.light)
                .is_some_and(|ph| matches!(ph, LightPhase::AllRed | LightPhase::SideGreen)),
            _ => false,
        }),
        SafetyProp::P4 => trace
            .snapshots
            .iter()
            .any(|s| s.light == Some(LightPhase::SideGreen) && in_zone(l, Agent::Ego, &s.ego)),
    })
}

fn snapshot_at(trace: &Trace, t: f64) -> Option<&Snapshot> {
    trace.snapshots.iter().find(|s| (s.t - t).abs() < 1e-9)
}

/// All evaluable properties violated in `trace`.
pub fn violated_props(trace: &Trace) -> Result<PropSet> {
    let mut out = PropSet::new();
    for p in SafetyProp::ALL {
        if p.evaluable(trace.layout.config_type) && check_property(p, trace)? {
            out.insert(p);
        }
    }
    Ok(out)
}

fn validate_trace(trace: &Trace) -> Result<()> {
    let bad = |m: &str| Err(Error::Classification(m.to_string()));
    if trace.snapshots.is_empty() {
        return bad("trace has no snapshots");
    }
    if trace.snapshots.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return bad("snapshot times must be strictly increasing");
    }
    for agent in [Agent::Ego, Agent::Arriving] {
        let entries = trace.events.iter().filter(|e| matches!(e, Event::ZoneEntry { vehicle, .. } if *vehicle == agent));
        let exits = trace.events.iter().filter(|e| matches!(e, Event::ZoneExit { vehicle, .. } if *vehicle == agent));
        let (n_in, n_out) = (entries.count(), exits.count());
        if n_in > 1 || n_out > n_in {
            return bad("zone events out of order");
        }
    }
    if trace.events.iter().filter(|e| matches!(e, Event::Collision { .. })).count() > 1 {
        return bad("more than one collision");
    }
    Ok(())
}

fn blockage(trace: &Trace, t_stall: f64) -> bool {
    let l = &trace.layout;
    if trace.ego_exited() || !l.has_arriving() {
        return false;
    }
    let ego: Vec<_> = trace.stalls(Agent::Ego).collect();
    trace.stalls(Agent::Arriving).any(|(a0, a1)| {
        let waiting = trace
            .snapshots
            .iter()
            .filter(|s| s.t >= a0 - 1e-9 && s.t <= a1 + 1e-9)
            .all(|s| s.arriving.is_some_and(|a| a.s <= l.cd_a));
        waiting && ego.iter().any(|&(e0, e1)| e1.min(a1) - e0.max(a0) >= t_stall - 1e-9)
    })
}

fn route_fault(trace: &Trace) -> Option<(Subject, RouteFaultKind)> {
    let mut changed = BTreeSet::new();
    let mut departed = BTreeSet::new();
    for e in &trace.events {
        match e {
            Event::BranchTaken { vehicle, branch, .. } if *branch != Branch::Assigned => {
                changed.insert(*vehicle);
            }
            Event::LaneDeparture { vehicle, .. } => {
                departed.insert(*vehicle);
            }
            _ => {}
        }
    }
    let who: BTreeSet<Agent> = changed.union(&departed).copied().collect();
    let subject = match (who.contains(&Agent::Ego), who.contains(&Agent::Arriving)) {
        (true, true) => Subject::Both,
        (true, false) => Subject::Ego,
        (false, true) => Subject::Arriving,
        (false, false) => return None,
    };
    let kind = match (!changed.is_empty(), !departed.is_empty()) {
        (true, true) => RouteFaultKind::ChangedThenDeviated,
        (true, false) => RouteFaultKind::ChangedRoute,
        _ => RouteFaultKind::DeviatedRoad,
    };
    Some((subject, kind))
}

/// Decision ladder: accident, route fault, blockage, progress, caution.
///
/// CS becomes CO when `analysis` says safe progress exists and `tc` is no
/// more critical than the critical values.
pub fn classify(trace: &Trace, tc: &TestCase, analysis: &CriticalValues, sim: &SimConfig) -> Result<Verdict> {
    validate_trace(trace)?;
    if let Some(hit) = trace.collision() {
        return match hit {
            (Agent::Ego, Agent::Arriving) => Ok(Verdict::Ae),
            (Agent::Arriving, Agent::Ego) => Ok(Verdict::Aa),
            (Agent::Ego, Agent::Front) => Ok(Verdict::Af),
            (a, b) => Err(Error::Classification(format!("unexpected collision {} -> {}", a.as_str(), b.as_str()))),
        };
    }
    let props = violated_props(trace)?;
    if let Some((subject, kind)) = route_fault(trace) {
        return Ok(Verdict::RouteFault { subject, kind, props });
    }
    if blockage(trace, sim.t_stall) {
        return Ok(Verdict::Blk);
    }
    if trace.ego_exited() {
        return Ok(if props.is_empty() { Verdict::PS } else { Verdict::PU(props) });
    }
    if !props.is_empty() {
        return Ok(Verdict::CU(props));
    }
    let covers = |hat: Option<f64>, x: f64| hat.map_or(true, |h| effective(x) >= h - 1e-9);
    let progress_existed = analysis.feasible
        && (!tc.has_arriving() || covers(analysis.x_a_hat, tc.x_a))
        && covers(analysis.x_f_hat, tc.x_f);
    Ok(if progress_existed { Verdict::CO } else { Verdict::CS })
}

/// Verdict frequencies of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: u32,
    /// Ordered by count (descending), then severity (descending).
    pub entries: Vec<(Verdict, u32)>,
}

impl CellResult {
    pub fn dominant(&self) -> &Verdict {
        &self.entries[0].0
    }

    pub fn count(&self, v: &Verdict) -> u32 {
        let key = v.to_string();
        self.entries.iter().filter(|(e, _)| e.to_string() == key).map(|(_, c)| *c).sum()
    }

    pub fn all_safe(&self) -> bool {
        self.entries.iter().all(|(v, _)| v.is_safe())
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }
}

impl fmt::Display for CellResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, c)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{v}({c}/{})", self.n)?;
        }
        Ok(())
    }
}

impl FromStr for CellResult {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Classification(format!("malformed cell `{s}`"));
        let mut entries = Vec::new();
        let mut n = None;
        for part in s.split(';') {
            let open = part.rfind('(').ok_or_else(bad)?;
            let counts = part[open + 1..].strip_suffix(')').ok_or_else(bad)?;
            let (k, total) = counts.split_once('/').ok_or_else(bad)?;
            let k: u32 = k.parse().map_err(|_| bad())?;
            let total: u32 = total.parse().map_err(|_| bad())?;
            if n.is_some_and(|m| m != total) {
                return Err(bad());
            }
            n = Some(total);
            entries.push((part[..open].parse()?, k));
        }
        Ok(CellResult { n: n.ok_or_else(bad)?, entries })
    }
}

/// Frequencies plus dominant verdict. Route faults are grouped by their
/// encoding; the props they carry are dropped here.
pub fn aggregate_cell(verdicts: &[Verdict]) -> Result<CellResult> {
    if verdicts.is_empty() {
        return Err(Error::Classification("cannot aggregate an empty cell".into()));
    }
    let mut counts: BTreeMap<String, (Verdict, u32)> = BTreeMap::new();
    for v in verdicts {
        let key = v.to_string();
        let entry = counts.entry(key.clone()).or_insert_with(|| (key.parse().expect("own encoding parses"), 0));
        entry.1 += 1;
    }
    let mut entries: Vec<(Verdict, u32)> = counts.into_values().collect();
    entries.sort_by(|(va, ca), (vb, cb)| {
        cb.cmp(ca).then(vb.severity().cmp(&va.severity())).then(va.to_string().cmp(&vb.to_string()))
    });
    Ok(CellResult { n: verdicts.len() as u32, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn props(ps: &[SafetyProp]) -> PropSet {
        ps.iter().copied().collect()
    }

    #[test]
    fn encoding_round_trips() {
        let all = [
            Verdict::CS,
            Verdict::CO,
            Verdict::PS,
            Verdict::PU(props(&[SafetyProp::P1, SafetyProp::P2])),
            Verdict::CU(props(&[SafetyProp::P1])),
            Verdict::Ae,
            Verdict::Aa,
            Verdict::Af,
            Verdict::Blk,
        ];
        let text: Vec<String> = all.iter().map(|v| v.to_string()).collect();
        assert_eq!(text.join(", "), "CS, CO, PS, PU[p1p2], CU[p1], Ae, Aa, Af, Blk");
        for v in &all {
            assert_eq!(&v.to_string().parse::<Verdict>().unwrap(), v);
        }
        for code in ["CRe", "CRa", "CRea", "DRe", "DRa", "CDRe", "CDRa", "CDRea"] {
            assert_eq!(code.parse::<Verdict>().unwrap().to_string(), code);
        }
        for bad in ["PU[]", "PU[p5]", "CRx", "XS", "PU"] {
            assert!(bad.parse::<Verdict>().is_err(), "{bad}");
        }
    }

    #[test]
    fn aggregation_examples() {
        let five = aggregate_cell(&vec![Verdict::PS; 5]).unwrap();
        assert_eq!(five.to_string(), "PS(5/5)");
        let mixed = aggregate_cell(&[Verdict::Aa, Verdict::PS, Verdict::Aa, Verdict::PS, Verdict::PS]).unwrap();
        assert_eq!(mixed.dominant(), &Verdict::PS);
        assert_eq!(mixed.to_string(), "PS(3/5);Aa(2/5)");
        let pu = Verdict::PU(props(&[SafetyProp::P1]));
        let cell = aggregate_cell(&[Verdict::CS, pu.clone(), pu.clone(), pu.clone(), pu.clone()]).unwrap();
        assert_eq!(cell.dominant(), &pu);
        // ties go to the more severe verdict
        let tie = aggregate_cell(&[Verdict::PS, Verdict::Ae]).unwrap();
        assert_eq!(tie.to_string(), "Ae(1/2);PS(1/2)");
        assert_eq!(tie.to_string().parse::<CellResult>().unwrap(), tie);
        assert!(aggregate_cell(&[]).is_err());
    }

    #[test]
    fn severity_order() {
        let order = [
            Verdict::Ae,
            Verdict::Blk,
            "CRe".parse().unwrap(),
            Verdict::PU(props(&[SafetyProp::P1])),
            Verdict::CU(props(&[SafetyProp::P2])),
            Verdict::PS,
            Verdict::CO,
            Verdict::CS,
        ];
        for w in order.windows(2) {
            assert!(w[0].severity() > w[1].severity());
        }
    }

    fn sim() -> SimConfig {
        SimConfig { t_stall: fixtures::T_STALL, dt: fixtures::DT, ..SimConfig::default() }
    }

    #[test]
    fn fixtures_classify_as_labelled() {
        let all = fixtures::all();
        assert!(all.len() >= 13);
        for f in &all {
            let v = classify(&f.trace, &f.tc, &f.analysis, &sim()).unwrap();
            assert_eq!(v.to_string(), f.label, "fixture {}", f.name);
        }
    }

    #[test]
    fn property_examples() {
        let all = fixtures::all();
        let get = |n: &str| all.iter().find(|f| f.name == n).unwrap();
        assert!(check_property(SafetyProp::P1, &get("shared_zone").trace).unwrap());
        assert!(!check_property(SafetyProp::P1, &get("empty_road").trace).unwrap());
        // yellow entry is legal, lingering into side green is not
        let late = &get("late_clearance").trace;
        assert!(!check_property(SafetyProp::P3, late).unwrap());
        assert!(check_property(SafetyProp::P4, late).unwrap());
        assert!(matches!(check_property(SafetyProp::P3, &get("empty_road").trace), Err(Error::Contract(_))));
    }

    #[test]
    fn collisions_never_yield_safe_verdicts() {
        for f in fixtures::all() {
            if f.trace.collision().is_some() {
                let v = classify(&f.trace, &f.tc, &f.analysis, &sim()).unwrap();
                assert!(v.is_accident());
            }
        }
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let f = &fixtures::all()[0];
        let mut t = f.trace.clone();
        t.snapshots.clear();
        assert!(matches!(classify(&t, &f.tc, &f.analysis, &sim()), Err(Error::Classification(_))));
        let mut t = f.trace.clone();
        t.snapshots.swap(1, 2);
        assert!(classify(&t, &f.tc, &f.analysis, &sim()).is_err());
    }
}
