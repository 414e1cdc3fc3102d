//! Campaign execution: grid x repeats dispatched over a worker pool.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use crate::error::{Error, Result};
use crate::generator::{build_grid, refine_boundary, round_up_tenth, Axis, CriticalValues, Grid, Phase, Refinement, TestCase};
use crate::kinematics::DynamicsProfile;
use crate::oracle::{aggregate_cell, classify, CellResult, Verdict};
use crate::scoring::{compare_evaluations, ledger_from_trace, CellEvaluation, Comparison, IncidentLedger, PenaltyTable};
use crate::sim::{run_scenario, SimConfig};
use crate::world::ABSENT;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one run: `sm(sm(sm(base) ^ cell) ^ repeat)` where `cell` packs
/// the speed index in the high 32 bits and the cell index in the low ones.
pub fn run_seed(base: u64, cell: u64, repeat: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ cell) ^ repeat)
}

fn cell_key(grid: usize, cell: usize) -> u64 {
    ((grid as u64) << 32) | cell as u64
}

/// One simulated and classified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub ledger: IncidentLedger,
}

pub fn run_case(tc: &TestCase, dyn_: &DynamicsProfile, cfg: &CampaignConfig, critical: &CriticalValues, seed: u64) -> Result<RunOutcome> {
    let sim = SimConfig { seed, ..cfg.sim.clone() };
    let trace = run_scenario(tc, dyn_, &cfg.policy, &sim)?;
    let verdict = classify(&trace, tc, critical, &sim)?;
    let ledger = ledger_from_trace(&trace, &verdict);
    Ok(RunOutcome { verdict, ledger })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    pub x_a: f64,
    pub x_f: f64,
    pub result: CellResult,
    /// Per-repeat verdicts, in repeat order.
    pub verdicts: Vec<Verdict>,
    pub ledgers: Vec<IncidentLedger>,
    pub mean_sc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub v_e: f64,
    pub x_e: f64,
    pub critical: CriticalValues,
    pub x_a_values: Vec<f64>,
    pub x_f_values: Vec<f64>,
    pub cells: Vec<CellRecord>,
    pub comparison: Option<Comparison>,
}

impl GridRecord {
    pub fn cell(&self, row: usize, col: usize) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub v_e: f64,
    pub axis: Axis,
    /// Analytic critical value on this axis, when one exists.
    pub analytic: Option<f64>,
    pub refinement: Option<Refinement>,
    pub error: Option<String>,
}

/// Where, when and how a campaign ran; excluded from result comparisons.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Execution {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
    pub jobs: usize,
    pub out_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub tool_version: String,
    pub seed: u64,
    pub config: CampaignConfig,
    pub grids: Vec<GridRecord>,
    pub refinements: Vec<RefinementRecord>,
    pub complete: bool,
    pub errors: Vec<String>,
    pub execution: Execution,
}

impl CampaignRecord {
    /// Equality ignoring execution metadata.
    pub fn same_results(&self, other: &CampaignRecord) -> bool {
        let strip = |r: &CampaignRecord| CampaignRecord { execution: Execution::default(), ..r.clone() };
        strip(self) == strip(other)
    }

    /// JSON without execution metadata; byte-comparable across runs.
    pub fn canonical_json(&self) -> Result<String> {
        let r = CampaignRecord { execution: Execution::default(), ..self.clone() };
        r.to_json()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn has_unsafe(&self) -> bool {
        self.grids.iter().flat_map(|g| &g.cells).any(|c| !c.result.all_safe())
    }
}

struct Job {
    grid: usize,
    cell: usize,
    repeat: u32,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Builds grids, runs every cell `repeats` times in parallel, classifies,
/// aggregates, scores and optionally refines boundaries.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignRecord> {
    let dyn_ = cfg.dynamics.profile()?;
    run_campaign_with(cfg, |tc, critical, seed| run_case(tc, &dyn_, cfg, critical, seed))
}

pub(crate) fn run_campaign_with<F>(cfg: &CampaignConfig, runner: F) -> Result<CampaignRecord>
where
    F: Fn(&TestCase, &CriticalValues, u64) -> Result<RunOutcome> + Sync,
{
    cfg.validate()?;
    let started = std::time::SystemTime::now();
    let clock = std::time::Instant::now();
    let dyn_ = cfg.dynamics.profile()?;
    let grids: Vec<Grid> = cfg.v_e.iter().map(|&v| build_grid(&cfg.context, &dyn_, v, &cfg.grid)).collect::<Result<_>>()?;

    let jobs: Vec<Job> = grids
        .iter()
        .enumerate()
        .flat_map(|(g, grid)| {
            (0..grid.cases.len()).flat_map(move |c| (0..grid.repeats).map(move |r| Job { grid: g, cell: c, repeat: r }))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Incomplete(format!("cannot start worker pool: {e}")))?;
    let base = cfg.seed();
    let outcomes: Vec<std::result::Result<RunOutcome, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let grid = &grids[j.grid];
                let seed = run_seed(base, cell_key(j.grid, j.cell), j.repeat as u64);
                match catch_unwind(AssertUnwindSafe(|| runner(&grid.cases[j.cell], &grid.critical, seed))) {
                    Ok(Ok(o)) => Ok(o),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(p) => Err(format!("worker panicked: {}", panic_message(p))),
                }
            })
            .collect()
    });

    // single collector, in job order
    let mut errors = Vec::new();
    let mut grid_records = Vec::with_capacity(grids.len());
    let mut it = jobs.iter().zip(outcomes);
    let table = PenaltyTable::default();
    for grid in &grids {
        let cols = grid.x_f_values.len();
        let mut cells = Vec::with_capacity(grid.cases.len());
        for (c, tc) in grid.cases.iter().enumerate() {
            let mut runs = Vec::with_capacity(grid.repeats as usize);
            let mut failed = false;
            for _ in 0..grid.repeats {
                let (job, out) = it.next().expect("one outcome per job");
                match out {
                    Ok(o) => runs.push(o),
                    Err(e) => {
                        failed = true;
                        errors.push(format!("v_e={} cell=({}, {}) repeat={}: {e}", grid.v_e, c / cols, c % cols, job.repeat));
                    }
                }
            }
            if failed {
                continue;
            }
            let verdicts: Vec<Verdict> = runs.iter().map(|o| o.verdict.clone()).collect();
            let ledgers: Vec<IncidentLedger> = runs.into_iter().map(|o| o.ledger).collect();
            let mut sum = 0.0;
            for l in &ledgers {
                sum += crate::scoring::score_with(l, &table, cfg.output.exclude_other)?.sc;
            }
            cells.push(CellRecord {
                row: c / cols,
                col: c % cols,
                x_a: tc.x_a,
                x_f: tc.x_f,
                result: aggregate_cell(&verdicts)?,
                mean_sc: sum / ledgers.len() as f64,
                verdicts,
                ledgers,
            });
        }
        let evals: Vec<CellEvaluation> =
            cells.iter().map(|c| CellEvaluation { result: c.result.clone(), ledgers: c.ledgers.clone() }).collect();
        let comparison = compare_evaluations(&evals, &table, cfg.output.threshold, cfg.output.exclude_other)?;
        grid_records.push(GridRecord {
            v_e: grid.v_e,
            x_e: grid.cases.first().map_or(0.0, |c| c.x_e),
            critical: grid.critical,
            x_a_values: grid.x_a_values.clone(),
            x_f_values: grid.x_f_values.clone(),
            cells,
            comparison: Some(comparison),
        });
    }

    let mut refinements = Vec::new();
    if errors.is_empty() {
        for (g, grid) in grids.iter().enumerate() {
            for &axis in &cfg.refine.axes {
                refinements.push(refine_axis(cfg, grid, g, axis, &runner));
            }
        }
    }

    Ok(CampaignRecord {
        tool_version: TOOL_VERSION.to_string(),
        seed: base,
        config: {
            let mut c = cfg.clone();
            c.jobs = 0;
            c.output.dir = None;
            c
        },
        grids: grid_records,
        refinements,
        complete: errors.is_empty(),
        errors,
        execution: Execution {
            started_unix_s: started.duration_since(std::time::UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            elapsed_s: clock.elapsed().as_secs_f64(),
            jobs: pool.current_num_threads(),
            out_dir: cfg.output.dir.clone(),
        },
    })
}

/// Phase of a case over all repeats; disagreement counts as `Other`.
pub fn repeated_phase<F>(tc: &TestCase, critical: &CriticalValues, repeats: u32, seed_of: impl Fn(u32) -> u64, runner: &F) -> Result<Phase>
where
    F: Fn(&TestCase, &CriticalValues, u64) -> Result<RunOutcome>,
{
    let mut phase = None;
    for r in 0..repeats {
        let o = runner(tc, critical, seed_of(r))?;
        let p = if o.verdict.is_safe() { o.verdict.phase() } else { Phase::Other };
        match phase {
            None => phase = Some(p),
            Some(q) if q != p => return Ok(Phase::Other),
            _ => {}
        }
    }
    Ok(phase.unwrap_or(Phase::Other))
}

fn refine_axis<F>(cfg: &CampaignConfig, grid: &Grid, g: usize, axis: Axis, runner: &F) -> RefinementRecord
where
    F: Fn(&TestCase, &CriticalValues, u64) -> Result<RunOutcome>,
{
    let crit = grid.critical;
    let analytic = match axis {
        Axis::Xa => crit.x_a_hat,
        Axis::Xf => crit.x_f_hat,
    };
    let mut rec = RefinementRecord { v_e: grid.v_e, axis, analytic, refinement: None, error: None };
    let Some(first) = grid.cases.first() else {
        rec.error = Some("empty grid".into());
        return rec;
    };
    // hold the other coordinate just on the feasible side
    let mut base = first.clone();
    base.x_a = crit.x_a_hat.map_or(ABSENT, |a| round_up_tenth(a) + 0.1);
    base.x_f = crit.x_f_hat.map_or(ABSENT, |f| round_up_tenth(f) + 0.1);
    if !base.has_arriving() && axis == Axis::Xf {
        base.x_a = ABSENT;
    }
    let base_seed = cfg.seed() ^ 0x5EED_0F_B0_0A_D5;
    let mut probe_no = 0u64;
    let result = refine_boundary(&base, axis, 0.0, cfg.refine.hi, cfg.refine.tol, |tc| {
        probe_no += 1;
        let key = cell_key(g, (1 << 31) | probe_no as usize);
        repeated_phase(tc, &crit, cfg.grid.repeats, |r| run_seed(base_seed, key, r as u64), runner)
    });
    match result {
        Ok(r) => rec.refinement = Some(r),
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}
