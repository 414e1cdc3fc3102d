use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cctb::generator::{build_grid, critical_values, refine_boundary, Axis, TestCase};
use cctb::harness::{self, CampaignConfig, CampaignRecord, Format};
use cctb::kinematics::{estimate_accel_profile, estimate_braking, CSV_HEADER};
use cctb::oracle::classify;
use cctb::policy::{PolicyId, PolicySpec};
use cctb::scoring::{compare_evaluations, score_with, CellEvaluation, IncidentLedger, PenaltyTable};
use cctb::sim::{run_scenario, PolicyRig};
use cctb::world::{ConfigType, ContextParams, ABSENT};
use cctb::Error;

/// Prints a line to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNSAFE: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "cctb", version, about = "Critical configuration test bench for driving policies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Campaign config (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    repeats: Option<u32>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, env = "CCTB_JOBS", value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "csv|ansi|json")]
    format: Option<Format>,
}

/// Scenario selection when no config file is given, or overrides on top of one.
#[derive(Args, Clone)]
struct Scenario {
    /// merging, lane_change, cross_yield or cross_light
    #[arg(long)]
    context: Option<ConfigType>,
    /// Policy name; `noisy` wraps safe_two_phase
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Dynamics preset: reference, interfuser, transfuser, lmdrive, mile
    #[arg(long)]
    dynamics: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate A/D tables empirically from a policy; prints table CSV
    Estimate {
        #[command(flatten)]
        scenario: Scenario,
        /// Braking and acceleration start speeds (m/s)
        #[arg(long, value_delimiter = ',')]
        speeds: Option<Vec<f64>>,
        /// Acceleration distances (m)
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10,20")]
        dists: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
    },
    /// Print critical values and the test grid
    Generate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0.0)]
        ve: f64,
    },
    /// Run one test case and print its verdict
    Run {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0.0)]
        ve: f64,
        /// Arriving distance; omit for no arriving vehicle
        #[arg(long)]
        xa: Option<f64>,
        /// Front distance; omit for no front vehicle
        #[arg(long)]
        xf: Option<f64>,
    },
    /// Run a full campaign
    Grid {
        #[command(flatten)]
        scenario: Scenario,
    },
    /// Bisect the caution/progress boundary along one axis
    Refine {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value = "xa")]
        axis: Axis,
        #[arg(long, default_value_t = 0.0)]
        ve: f64,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 60.0)]
        hi: f64,
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        /// Held value of the other axis (defaults to just above its critical value)
        #[arg(long)]
        other: Option<f64>,
    },
    /// Score a ledger or a campaign record
    Score {
        input: PathBuf,
        /// Drop incidents caused by other agents
        #[arg(long)]
        exclude_other: bool,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Re-render a campaign record
    Report { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Table { .. } | Error::Domain(_) | Error::Json(_) => EXIT_CONFIG,
                _ => EXIT_INTERNAL,
            })
        }
    }
}

fn build_config(g: &Global, s: &Scenario) -> cctb::Result<CampaignConfig> {
    let mut cfg = match &g.config {
        Some(path) => harness::load_config(path)?,
        None => {
            let ct = s.context.unwrap_or(ConfigType::Merging);
            CampaignConfig::new(ContextParams::new(ct), PolicySpec::new(PolicyId::SafeTwoPhase))
        }
    };
    if let Some(ct) = s.context {
        if ct != cfg.context.config_type {
            cfg.context = ContextParams::new(ct);
        }
    }
    if let Some(name) = &s.policy {
        let (margin, g_min) = (cfg.policy.margin, cfg.policy.g_min);
        let id = if name.eq_ignore_ascii_case("noisy") {
            PolicyId::noisy(PolicyId::SafeTwoPhase, s.sigma.unwrap_or(0.15))?
        } else {
            name.parse()?
        };
        cfg.policy = PolicySpec { id, margin, g_min };
    } else if let (Some(sigma), PolicyId::Noisy { inner, .. }) = (s.sigma, &cfg.policy.id) {
        cfg.policy.id = PolicyId::noisy((**inner).clone(), sigma)?;
    }
    if let Some(m) = s.margin {
        cfg.policy.margin = m;
    }
    if let Some(d) = &s.dynamics {
        cfg.dynamics = harness::DynamicsSource::Preset { name: d.clone() };
    }
    if let Some(seed) = g.seed {
        cfg.sim.seed = seed;
    }
    if let Some(r) = g.repeats {
        cfg.grid.repeats = r;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if let Some(out) = &g.out {
        cfg.output.dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> cctb::Result<u8> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Estimate { scenario, speeds, dists, tol } => estimate(build_config(g, scenario)?, speeds.clone(), dists, *tol),
        Cmd::Generate { scenario, ve } => generate(g, &build_config(g, scenario)?, *ve),
        Cmd::Run { scenario, ve, xa, xf } => run_one(g, &build_config(g, scenario)?, *ve, *xa, *xf),
        Cmd::Grid { scenario } => grid(g, &build_config(g, scenario)?),
        Cmd::Refine { scenario, axis, ve, lo, hi, tol, other } => {
            refine(&build_config(g, scenario)?, *axis, *ve, *lo, *hi, *tol, *other)
        }
        Cmd::Score { input, exclude_other, threshold } => score(input, *exclude_other, *threshold),
        Cmd::Report { input } => report(g, input),
    }
}

fn estimate(cfg: CampaignConfig, speeds: Option<Vec<f64>>, dists: &[f64], tol: f64) -> cctb::Result<u8> {
    let profile = cfg.dynamics.profile()?;
    let speeds = speeds.unwrap_or_else(|| (0..=profile.v_max().floor() as usize).map(|v| v as f64).collect());
    let mut rig = PolicyRig::new(cfg.policy.clone(), profile, cfg.sim.clone());
    let mut out = format!("{CSV_HEADER}\n");
    for &v in &speeds {
        let b = estimate_braking(&mut rig, v, 0.5, tol)?;
        out.push_str(&format!("B,{v},,{b:.3},\n"));
    }
    for &v in &speeds {
        for &x in dists {
            let (at, av) = estimate_accel_profile(&mut rig, v, x)?;
            out.push_str(&format!("A,{v},{x},{av:.3},{at:.3}\n"));
        }
    }
    say!("{}", out.trim_end());
    if let Some(dir) = &cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ad_estimated.csv"), &out)?;
    }
    Ok(0)
}

fn generate(g: &Global, cfg: &CampaignConfig, v_e: f64) -> cctb::Result<u8> {
    let profile = cfg.dynamics.profile()?;
    let crit = critical_values(&cfg.context, &profile, v_e)?;
    let grid = build_grid(&cfg.context, &profile, v_e, &cfg.grid)?;
    if g.format == Some(Format::Json) {
        say!("{}", serde_json::to_string_pretty(&grid)?);
        return Ok(0);
    }
    let show = |x: Option<f64>| x.map_or("none".to_string(), |x| format!("{x:.3}"));
    say!("context={} v_e={v_e} x_e_hat={:.3}", cfg.context.config_type, crit.x_e_hat);
    say!("x_a_hat={} x_f_hat={} feasible={}", show(crit.x_a_hat), show(crit.x_f_hat), crit.feasible);
    let label = |x: f64| if x >= ABSENT { "absent".to_string() } else { format!("{x}") };
    say!("x_a: {}", grid.x_a_values.iter().map(|x| label(*x)).collect::<Vec<_>>().join(" "));
    say!("x_f: {}", grid.x_f_values.iter().map(|x| label(*x)).collect::<Vec<_>>().join(" "));
    say!("cases={} repeats={}", grid.cases.len(), grid.repeats);
    Ok(0)
}

fn run_one(g: &Global, cfg: &CampaignConfig, v_e: f64, xa: Option<f64>, xf: Option<f64>) -> cctb::Result<u8> {
    let profile = cfg.dynamics.profile()?;
    let tc = TestCase::new(cfg.context.clone(), &profile, v_e, xa.unwrap_or(ABSENT), xf.unwrap_or(ABSENT))?;
    let crit = critical_values(&cfg.context, &profile, v_e)?;
    let trace = run_scenario(&tc, &profile, &cfg.policy, &cfg.sim)?;
    let verdict = classify(&trace, &tc, &crit, &cfg.sim)?;
    let ledger = cctb::scoring::ledger_from_trace(&trace, &verdict);
    let sc = score_with(&ledger, &PenaltyTable::default(), cfg.output.exclude_other)?;
    if let Some(dir) = &cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        match g.format.unwrap_or(Format::Csv) {
            Format::Json => std::fs::write(dir.join("trace.json"), trace.to_json()?)?,
            _ => std::fs::write(dir.join("trace.csv"), trace.to_csv())?,
        }
    }
    if g.format == Some(Format::Json) {
        let out = serde_json::json!({ "verdict": verdict, "end": trace.end, "ledger": ledger, "score": sc });
        say!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        say!("verdict={verdict} end={:?} t={:.2} Sc={:.3}", trace.end, trace.final_t(), sc.sc);
    }
    Ok(if verdict.is_safe() { 0 } else { EXIT_UNSAFE })
}

fn grid(g: &Global, cfg: &CampaignConfig) -> cctb::Result<u8> {
    let record = harness::run_campaign(cfg)?;
    if let Some(dir) = &cfg.output.dir {
        for f in &cfg.output.formats {
            harness::emit_grid(&record, *f, dir)?;
        }
        if let Some(f) = g.format {
            if !cfg.output.formats.contains(&f) {
                harness::emit_grid(&record, f, dir)?;
            }
        }
    }
    say!("{}", harness::render(&record, g.format.unwrap_or(Format::Ansi))?);
    finish(&record)
}

fn finish(record: &CampaignRecord) -> cctb::Result<u8> {
    if !record.complete {
        for e in &record.errors {
            eprintln!("error: {e}");
        }
        return Err(Error::Incomplete(format!("{} run(s) failed", record.errors.len())));
    }
    Ok(if record.has_unsafe() { EXIT_UNSAFE } else { 0 })
}

fn refine(cfg: &CampaignConfig, axis: Axis, v_e: f64, lo: f64, hi: f64, tol: f64, other: Option<f64>) -> cctb::Result<u8> {
    let profile = cfg.dynamics.profile()?;
    let crit = critical_values(&cfg.context, &profile, v_e)?;
    let above = |x: Option<f64>| x.map_or(ABSENT, |x| cctb::generator::round_up_tenth(x) + 0.1);
    let (xa, xf) = match axis {
        Axis::Xa => (lo, other.unwrap_or(above(crit.x_f_hat))),
        Axis::Xf => (other.unwrap_or(above(crit.x_a_hat)), lo),
    };
    let base = TestCase::new(cfg.context.clone(), &profile, v_e, xa, xf)?;
    let runner = |tc: &TestCase, c: &cctb::generator::CriticalValues, seed: u64| harness::run_case(tc, &profile, cfg, c, seed);
    let mut probe = 0u64;
    let result = refine_boundary(&base, axis, lo, hi, tol, |tc| {
        probe += 1;
        harness::repeated_phase(tc, &crit, cfg.grid.repeats, |r| harness::run_seed(cfg.seed(), probe, r as u64), &runner)
    })?;
    let analytic = match axis {
        Axis::Xa => crit.x_a_hat,
        Axis::Xf => crit.x_f_hat,
    };
    let out = serde_json::json!({ "refinement": result, "analytic": analytic, "probes": result.probes.len() });
    say!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn score(input: &Path, exclude_other: bool, threshold: Option<f64>) -> cctb::Result<u8> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let table = PenaltyTable::default();
    if value.get("grids").is_some() {
        let record: CampaignRecord = serde_json::from_value(value)?;
        let threshold = threshold.unwrap_or(record.config.output.threshold);
        let mut reports = Vec::new();
        for g in &record.grids {
            let evals: Vec<CellEvaluation> =
                g.cells.iter().map(|c| CellEvaluation { result: c.result.clone(), ledgers: c.ledgers.clone() }).collect();
            let cmp = compare_evaluations(&evals, &table, threshold, exclude_other)?;
            reports.push(serde_json::json!({ "v_e": g.v_e, "comparison": cmp }));
        }
        say!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        let ledger = IncidentLedger::from_json(&text)?;
        say!("{}", serde_json::to_string_pretty(&score_with(&ledger, &table, exclude_other)?)?);
    }
    Ok(0)
}

fn report(g: &Global, input: &Path) -> cctb::Result<u8> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
    let record = CampaignRecord::from_json(&text)?;
    if let Some(dir) = &g.out {
        harness::emit_grid(&record, g.format.unwrap_or(Format::Csv), dir)?;
    }
    say!("{}", harness::render(&record, g.format.unwrap_or(Format::Ansi))?);
    Ok(if record.has_unsafe() { EXIT_UNSAFE } else { 0 })
}
