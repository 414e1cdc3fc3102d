//! Tabulated A/D functions and their CSV representation.
//!
//! File layout (one header line, then one row per sample):
//!
//! ```text
//! kind,v,x,value1,value2
//! B,4.0,,1.9,
//! A,2.0,3.0,5.0,1.0
//! ```
//!
//! `B` rows carry the braking distance in `value1`. `A` rows carry the
//! reached speed in `value1` and the elapsed time in `value2`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "kind,v,x,value1,value2";

/// Braking table plus a rectangular (v, x) acceleration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AdTables {
    braking: Vec<(f64, f64)>,
    speeds: Vec<f64>,
    dists: Vec<f64>,
    // Row-major [speed][dist].
    reached: Vec<Vec<f64>>,
    elapsed: Vec<Vec<f64>>,
}

impl AdTables {
    /// Builds tables from raw samples. `accel` holds `(v, x, AV, AT)` and must
    /// form a complete grid.
    pub fn new(braking: Vec<(f64, f64)>, accel: Vec<(f64, f64, f64, f64)>) -> Result<Self> {
        let mut braking = braking;
        braking.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bad = |msg: &str| Error::Table { line: 0, msg: msg.to_string() };
        if braking.is_empty() {
            return Err(bad("no braking rows"));
        }
        if braking[0].0 != 0.0 || braking[0].1 != 0.0 {
            return Err(bad("braking table must start with B(0) = 0"));
        }
        for w in braking.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(bad("braking speeds must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(bad("braking distances must be non-decreasing in v"));
            }
        }

        let mut speeds: Vec<f64> = accel.iter().map(|r| r.0).collect();
        let mut dists: Vec<f64> = accel.iter().map(|r| r.1).collect();
        for axis in [&mut speeds, &mut dists] {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        if speeds.is_empty() || dists.len() < 2 {
            return Err(bad("acceleration grid needs at least one speed row and two distance columns"));
        }
        if dists[0] != 0.0 {
            return Err(bad("acceleration grid must contain the x = 0 column"));
        }
        if speeds.iter().chain(&dists).any(|v| *v < 0.0) {
            return Err(bad("negative grid coordinate"));
        }

        let mut reached = vec![vec![f64::NAN; dists.len()]; speeds.len()];
        let mut elapsed = reached.clone();
        for &(v, x, av, at) in &accel {
            let i = speeds.iter().position(|s| *s == v).expect("speed indexed above");
            let j = dists.iter().position(|d| *d == x).expect("distance indexed above");
            if !reached[i][j].is_nan() {
                return Err(bad(&format!("duplicate acceleration sample at v={v}, x={x}")));
            }
            reached[i][j] = av;
            elapsed[i][j] = at;
        }
        if reached.iter().flatten().any(|v| v.is_nan()) {
            return Err(bad("acceleration grid is incomplete"));
        }
        for (i, v) in speeds.iter().enumerate() {
            if reached[i][0] != *v || elapsed[i][0] != 0.0 {
                return Err(bad(&format!("row v={v} must satisfy AV(v,0)=v and AT(v,0)=0")));
            }
        }

        Ok(Self { braking, speeds, dists, reached, elapsed })
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut braking = Vec::new();
        let mut accel = Vec::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        });

        match lines.next() {
            Some((_, h)) if h.trim().replace(' ', "") == CSV_HEADER => {}
            Some((n, _)) => {
                return Err(Error::Table { line: n + 1, msg: format!("expected header `{CSV_HEADER}`") })
            }
            None => return Err(Error::Table { line: 0, msg: "empty table file".into() }),
        }

        for (n, line) in lines {
            let line_no = n + 1;
            let err = |msg: String| Error::Table { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let num = |idx: usize| -> Result<f64> {
                fields[idx]
                    .parse::<f64>()
                    .map_err(|_| err(format!("field {} is not a number: `{}`", idx + 1, fields[idx])))
            };
            match fields[0] {
                "B" => {
                    if !fields[2].is_empty() || !fields[4].is_empty() {
                        return Err(err("braking rows must leave x and value2 empty".into()));
                    }
                    braking.push((num(1)?, num(3)?));
                }
                "A" => accel.push((num(1)?, num(2)?, num(3)?, num(4)?)),
                other => return Err(err(format!("unknown row kind `{other}`"))),
            }
        }
        Self::new(braking, accel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read A/D table {}: {e}", path.display())))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (v, b) in &self.braking {
            let _ = writeln!(out, "B,{v:.1},,{b:.1},");
        }
        for (i, v) in self.speeds.iter().enumerate() {
            for (j, x) in self.dists.iter().enumerate() {
                let _ = writeln!(out, "A,{v:.1},{x:.1},{:.1},{:.1}", self.reached[i][j], self.elapsed[i][j]);
            }
        }
        out
    }

    pub fn braking(&self) -> &[(f64, f64)] {
        &self.braking
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn dists(&self) -> &[f64] {
        &self.dists
    }

    /// Raw grid sample `(AV, AT)` at row `i`, column `j`.
    pub fn sample(&self, i: usize, j: usize) -> (f64, f64) {
        (self.reached[i][j], self.elapsed[i][j])
    }

    /// True when every row has AV non-decreasing and AT strictly increasing
    /// in x. Shipped tables are not required to pass this.
    pub fn is_monotone(&self) -> bool {
        (0..self.speeds.len()).all(|i| {
            self.reached[i].windows(2).all(|w| w[1] >= w[0])
                && self.elapsed[i].windows(2).all(|w| w[1] > w[0])
        })
    }

    pub(crate) fn braking_at(&self, v: f64) -> f64 {
        let (vs, bs): (Vec<f64>, Vec<f64>) = self.braking.iter().copied().unzip();
        interp1(&vs, &bs, v)
    }

    /// Slope dB/dv of the braking segment containing `v`; zero past the
    /// last row, where the table is clamped.
    pub(crate) fn braking_slope(&self, v: f64) -> f64 {
        let b = &self.braking;
        if b.len() < 2 || v >= b[b.len() - 1].0 {
            return 0.0;
        }
        let k = b.windows(2).position(|w| v < w[1].0).unwrap_or(b.len() - 2);
        (b[k + 1].1 - b[k].1) / (b[k + 1].0 - b[k].0)
    }

    /// Row-blended raw AV and AT. Speeds outside the grid clamp to the edge
    /// row; distances beyond the last column continue at the edge speed
    /// (capped by `v_cap`).
    pub(crate) fn accel_lookup(&self, v: f64, x: f64, v_cap: f64) -> (f64, f64) {
        let (lo, hi, w) = bracket(&self.speeds, v);
        let (av_lo, at_lo) = self.row_lookup(lo, x, v_cap);
        if lo == hi {
            return (av_lo, at_lo);
        }
        let (av_hi, at_hi) = self.row_lookup(hi, x, v_cap);
        (lerp(av_lo, av_hi, w), lerp(at_lo, at_hi, w))
    }

    fn row_lookup(&self, row: usize, x: f64, v_cap: f64) -> (f64, f64) {
        let last = self.dists.len() - 1;
        let x_last = self.dists[last];
        if x <= x_last {
            let (a, b, w) = bracket(&self.dists, x);
            return (
                lerp(self.reached[row][a], self.reached[row][b], w),
                lerp(self.elapsed[row][a], self.elapsed[row][b], w),
            );
        }
        let edge_speed = self.reached[row][last];
        let cruise = edge_speed.min(v_cap);
        let at = if cruise > 0.0 { self.elapsed[row][last] + (x - x_last) / cruise } else { f64::INFINITY };
        (edge_speed, at)
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Indices of the grid points surrounding `x` (clamped) and the blend weight.
fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let k = grid.windows(2).position(|w| x < w[1]).expect("x inside grid");
    (k, k + 1, (x - grid[k]) / (grid[k + 1] - grid[k]))
}

pub(crate) fn interp1(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let (a, b, w) = bracket(xs, x);
    lerp(ys[a], ys[b], w)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "kind,v,x,value1,value2\nB,0.0,,0.0,\nB,2.0,,1.0,\nA,0.0,0.0,0.0,0.0\nA,0.0,2.0,2.0,2.0\n";

    #[test]
    fn parses_minimal_table() {
        let t = AdTables::from_csv(SMALL).unwrap();
        assert_eq!(t.braking_at(1.0), 0.5);
        assert_eq!(t.accel_lookup(0.0, 1.0, 10.0), (1.0, 1.0));
    }

    #[test]
    fn distance_past_last_column_cruises() {
        let t = AdTables::from_csv(SMALL).unwrap();
        let (av, at) = t.accel_lookup(0.0, 6.0, 10.0);
        assert_eq!(av, 2.0);
        assert_eq!(at, 4.0);
        // cruise speed is capped
        assert_eq!(t.accel_lookup(0.0, 6.0, 1.0).1, 6.0);
    }

    #[test]
    fn rejects_wrong_header_and_bad_rows() {
        assert!(matches!(AdTables::from_csv("v,x\n"), Err(Error::Table { line: 1, .. })));
        let bad = SMALL.replace("B,2.0,,1.0,", "Q,2.0,,1.0,");
        assert!(matches!(AdTables::from_csv(&bad), Err(Error::Table { line: 3, .. })));
        let incomplete = "kind,v,x,value1,value2\nB,0.0,,0.0,\nA,0.0,0.0,0.0,0.0\nA,1.0,0.0,1.0,0.0\nA,0.0,1.0,1.0,1.0\n";
        assert!(AdTables::from_csv(incomplete).is_err());
    }

    #[test]
    fn rejects_nonzero_origin() {
        let bad = SMALL.replace("B,0.0,,0.0,", "B,0.0,,0.2,");
        assert!(AdTables::from_csv(&bad).is_err());
        let bad = SMALL.replace("A,0.0,0.0,0.0,0.0", "A,0.0,0.0,0.5,0.0");
        assert!(AdTables::from_csv(&bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = AdTables::from_csv(SMALL).unwrap();
        assert_eq!(AdTables::from_csv(&t.to_csv()).unwrap(), t);
    }
}
