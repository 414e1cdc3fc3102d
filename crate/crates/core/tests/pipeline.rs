//! End-to-end: config file -> campaign -> artifacts -> scores.

use std::collections::BTreeMap;

use cctb::harness::{emit_grid, load_config, parse_csv, run_campaign, CampaignRecord, Format};
use cctb::scoring::{compare_evaluations, CellEvaluation, PenaltyTable};

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("campaign.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn default_merging_campaign_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(write_config(dir.path(), "[context]\ntype = \"merging\"\n")).unwrap();
    let rec = run_campaign(&cfg).unwrap();
    assert!(rec.complete);
    for g in &rec.grids {
        assert!(g.x_a_values.len() <= 12 && g.x_f_values.len() <= 15);
        assert_eq!(g.cells.len(), g.x_a_values.len() * g.x_f_values.len());
        assert!(g.cells.iter().all(|c| c.result.n == 5));
        // SafeTwoPhase never produces an unsafe verdict
        assert!(g.cells.iter().all(|c| c.result.all_safe()), "{}", g.cells.iter().map(|c| c.result.to_string()).collect::<Vec<_>>().join(" "));
    }
    let again = run_campaign(&cfg).unwrap();
    assert!(rec.same_results(&again));
}

#[test]
fn csv_and_json_agree_on_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(write_config(
        dir.path(),
        "[context]\ntype = \"cross_yield\"\n[policy]\nname = \"noisy\"\nsigma = 0.15\n\
         [grid]\nxa = { start = 30, stop = 45, step = 5 }\nxf = [0, 40]\nrepeats = 5\n",
    ))
    .unwrap();
    let rec = run_campaign(&cfg).unwrap();
    let out = dir.path().join("out");
    emit_grid(&rec, Format::Csv, &out).unwrap();
    let json = emit_grid(&rec, Format::Json, &out).unwrap();
    let back = CampaignRecord::from_json(&std::fs::read_to_string(&json[0]).unwrap()).unwrap();
    assert_eq!(back, rec);

    for (i, g) in back.grids.iter().enumerate() {
        let csv = std::fs::read_to_string(out.join(format!("grid{i}_ve{}.csv", g.v_e))).unwrap();
        assert!(csv.contains(&format!("seed={}", rec.seed)));
        let mut from_csv: BTreeMap<String, u32> = BTreeMap::new();
        for cell in parse_csv(&csv).unwrap().into_iter().flatten().flatten() {
            for (v, n) in cell.entries {
                *from_csv.entry(v.to_string()).or_default() += n;
            }
        }
        let mut from_json: BTreeMap<String, u32> = BTreeMap::new();
        for v in g.cells.iter().flat_map(|c| &c.verdicts) {
            *from_json.entry(v.to_string()).or_default() += 1;
        }
        assert_eq!(from_csv, from_json);
    }
}

// Unsafe-but-unpunished runs outscore conservative stops: the comparison
// must flag both directions.
#[test]
fn score_disagrees_with_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let base = "[context]\ntype = \"cross_yield\"\n[grid]\nxa = [5, 10]\nxf = [40]\nve = [0]\nrepeats = 1\ninclude_critical = false\n";
    let safe = run_campaign(&load_config(write_config(dir.path(), base)).unwrap()).unwrap();
    let bad = run_campaign(&load_config(write_config(dir.path(), &format!("{base}[policy]\nname = \"aggressive\"\n"))).unwrap()).unwrap();
    let cells = |r: &CampaignRecord| -> Vec<CellEvaluation> {
        r.grids[0].cells.iter().map(|c| CellEvaluation { result: c.result.clone(), ledgers: c.ledgers.clone() }).collect()
    };
    let t = PenaltyTable::default();
    let s = compare_evaluations(&cells(&safe), &t, 50.0, false).unwrap();
    let b = compare_evaluations(&cells(&bad), &t, 50.0, false).unwrap();
    assert!(bad.grids[0].cells.iter().all(|c| !c.result.all_safe()));
    assert!(safe.grids[0].cells.iter().all(|c| c.result.all_safe()));
    assert_eq!((b.masking, b.converse), (2, 0));
    assert_eq!((s.masking, s.converse), (0, 2));
    assert!(b.mean_sc > s.mean_sc);
}

#[test]
fn refinement_recorded_in_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(write_config(
        dir.path(),
        "[context]\ntype = \"cross_yield\"\n[grid]\nxa = [0]\nxf = [40]\nve = [0]\nrepeats = 1\nrefine = [\"xa\", \"xf\"]\n",
    ))
    .unwrap();
    let rec = run_campaign(&cfg).unwrap();
    assert_eq!(rec.refinements.len(), 2);
    for r in &rec.refinements {
        let found = r.refinement.as_ref().unwrap_or_else(|| panic!("{:?}", r.error));
        let hat = r.analytic.unwrap();
        assert!(found.lo - 0.1 <= hat && hat <= found.hi + 0.1, "{r:?}");
    }
}
