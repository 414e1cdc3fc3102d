//! Grid rendering: CSV tables, ANSI heatmaps and JSON records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::campaign::{CampaignRecord, GridRecord};
use super::config::Format;
use crate::error::Result;
use crate::oracle::{CellResult, Verdict};
use crate::world::ABSENT;

fn axis_label(x: f64) -> String {
    if x >= ABSENT {
        "absent".into()
    } else {
        format!("{x}")
    }
}

fn header_comment(record: &CampaignRecord, grid: &GridRecord) -> Result<String> {
    let config = serde_json::to_string(&record.config)?;
    Ok(format!("# cctb {} seed={} v_e={} config={config}", record.tool_version, record.seed, grid.v_e))
}

/// First row holds the x_f values, first column the x_a values; cells are
/// `VERDICT(k/n)` joined by `;`.
pub fn render_csv(record: &CampaignRecord, grid: &GridRecord) -> Result<String> {
    let mut out = header_comment(record, grid)?;
    out.push('\n');
    out.push_str("x_a\\x_f");
    for f in &grid.x_f_values {
        let _ = write!(out, ",{}", axis_label(*f));
    }
    out.push('\n');
    for (row, a) in grid.x_a_values.iter().enumerate() {
        out.push_str(&axis_label(*a));
        for col in 0..grid.x_f_values.len() {
            out.push(',');
            if let Some(c) = grid.cell(row, col) {
                out.push_str(&c.result.to_string());
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads the cell table back out of [`render_csv`] output.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<Option<CellResult>>>> {
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cells = line
            .split(',')
            .skip(1)
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse().map(Some) })
            .collect::<Result<Vec<_>>>()?;
        rows.push(cells);
    }
    Ok(rows)
}

/// 256-colour background per verdict class.
fn colour(v: &Verdict) -> u8 {
    match v {
        Verdict::PS => 34,                            // green
        Verdict::CS | Verdict::CO => 33,              // blue
        Verdict::PU(_) | Verdict::CU(_) => 208,       // orange
        Verdict::Ae | Verdict::Aa | Verdict::Af => 196, // red
        Verdict::RouteFault { .. } => 129,            // purple
        Verdict::Blk => 244,                          // gray
    }
}

pub fn render_ansi(record: &CampaignRecord, grid: &GridRecord) -> String {
    let width = grid
        .cells
        .iter()
        .map(|c| c.result.to_string().len())
        .chain(grid.x_f_values.iter().map(|f| axis_label(*f).len()))
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!(
        "cctb {} seed={} context={} policy={} v_e={}\n",
        record.tool_version, record.seed, record.config.context.config_type, record.config.policy.id, grid.v_e
    );
    let _ = write!(out, "{:>8} ", "xa\\xf");
    for f in &grid.x_f_values {
        let _ = write!(out, "{:^width$} ", axis_label(*f));
    }
    out.push('\n');
    for (row, a) in grid.x_a_values.iter().enumerate() {
        let _ = write!(out, "{:>8} ", axis_label(*a));
        for col in 0..grid.x_f_values.len() {
            match grid.cell(row, col) {
                Some(c) => {
                    let _ = write!(
                        out,
                        "\x1b[48;5;{}m\x1b[38;5;16m{:^width$}\x1b[0m ",
                        colour(c.result.dominant()),
                        c.result.to_string()
                    );
                }
                None => {
                    let _ = write!(out, "{:^width$} ", "?");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn grid_stem(i: usize, grid: &GridRecord) -> String {
    format!("grid{i}_ve{}", grid.v_e)
}

/// Writes the record in `format` under `dir`; returns the files written.
pub fn emit_grid(record: &CampaignRecord, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        Format::Json => {
            let path = dir.join("campaign.json");
            std::fs::write(&path, record.to_json()?)?;
            written.push(path);
        }
        Format::Csv | Format::Ansi => {
            for (i, g) in record.grids.iter().enumerate() {
                let (path, text) = if format == Format::Csv {
                    (dir.join(format!("{}.csv", grid_stem(i, g))), render_csv(record, g)?)
                } else {
                    (dir.join(format!("{}.ansi", grid_stem(i, g))), render_ansi(record, g))
                };
                std::fs::write(&path, text)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// The record rendered to a string, as printed on stdout.
pub fn render(record: &CampaignRecord, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => record.to_json()?,
        Format::Csv => record.grids.iter().map(|g| render_csv(record, g)).collect::<Result<Vec<_>>>()?.join("\n"),
        Format::Ansi => record.grids.iter().map(|g| render_ansi(record, g)).collect::<Vec<_>>().join("\n"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::campaign::{CellRecord, Execution};
    use crate::harness::config::CampaignConfig;
    use crate::oracle::aggregate_cell;
    use crate::policy::{PolicyId, PolicySpec};
    use crate::scoring::IncidentLedger;
    use crate::world::{ConfigType, ContextParams};

    fn record(verdicts: Vec<Verdict>) -> CampaignRecord {
        let cfg = CampaignConfig::new(ContextParams::new(ConfigType::Merging), PolicySpec::new(PolicyId::SafeTwoPhase));
        let n = verdicts.len();
        let cell = CellRecord {
            row: 0,
            col: 0,
            x_a: 10.0,
            x_f: 40.0,
            result: aggregate_cell(&verdicts).unwrap(),
            verdicts,
            ledgers: vec![IncidentLedger::new(1.0); n],
            mean_sc: 100.0,
        };
        let grid = GridRecord {
            v_e: 0.0,
            x_e: 0.0,
            critical: crate::generator::critical_values(&cfg.context, &crate::kinematics::DynamicsProfile::reference(), 0.0).unwrap(),
            x_a_values: vec![10.0],
            x_f_values: vec![40.0],
            cells: vec![cell],
            comparison: None,
        };
        CampaignRecord {
            tool_version: "test".into(),
            seed: 3,
            config: cfg,
            grids: vec![grid],
            refinements: vec![],
            complete: true,
            errors: vec![],
            execution: Execution::default(),
        }
    }

    #[test]
    fn csv_cells() {
        let r = record(vec![Verdict::PS; 5]);
        let csv = render_csv(&r, &r.grids[0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# cctb test seed=3"));
        assert_eq!(lines[1], "x_a\\x_f,40");
        assert_eq!(lines[2], "10,PS(5/5)");

        let mixed = record(vec![Verdict::PS, Verdict::Aa, Verdict::PS, Verdict::Aa, Verdict::PS]);
        let csv = render_csv(&mixed, &mixed.grids[0]).unwrap();
        assert!(csv.lines().nth(2).unwrap().ends_with(",PS(3/5);Aa(2/5)"));
        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(parsed[0][0].as_ref(), Some(&mixed.grids[0].cells[0].result));
    }

    #[test]
    fn ansi_and_files() {
        let r = record(vec![Verdict::Aa, Verdict::Aa, Verdict::PS]);
        let text = render_ansi(&r, &r.grids[0]);
        assert!(text.contains("\x1b[48;5;196m"));
        let dir = tempfile::tempdir().unwrap();
        for f in [Format::Csv, Format::Ansi, Format::Json] {
            let files = emit_grid(&r, f, dir.path()).unwrap();
            assert_eq!(files.len(), 1);
        }
        let back = CampaignRecord::from_json(&std::fs::read_to_string(dir.path().join("campaign.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
