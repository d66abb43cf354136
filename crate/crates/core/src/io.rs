//! CSV files: header row, comma separated, `{:.16e}` floats, `\n` line ends.
//! Seventeen significant digits make every value round-trip bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dynamics::{ControlTrajectory, StateTrajectory, TimeGrid};
use crate::error::{Error, Result};
use crate::verify::VerificationResult;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Builds a CSV document from a header and rows of numbers.
pub fn to_csv<'a>(header: &[String], rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str, origin: &str) -> Result<Table> {
    let bad = |message: String| Error::Csv {
        path: origin.to_string(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if row.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string())
}

/// One row per interval: left endpoint `t_k`, then `U_k`.
pub fn control_csv(ctrl: &ControlTrajectory) -> String {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=ctrl.inputs()).map(|i| format!("u{i}")))
        .collect();
    let times = ctrl.grid.times();
    let rows: Vec<Vec<f64>> = (0..ctrl.steps())
        .map(|k| std::iter::once(times[k]).chain(ctrl.at(k)).collect())
        .collect();
    to_csv(&header, rows.iter().map(Vec::as_slice))
}

/// Reads a control written by [`control_csv`] and checks it against `grid`.
pub fn read_control(path: &Path, grid: &TimeGrid, m: usize) -> Result<ControlTrajectory> {
    let table = read_csv(path)?;
    let origin = path.display().to_string();
    control_from_table(&table, grid, m, &origin)
}

pub fn control_from_table(table: &Table, grid: &TimeGrid, m: usize, origin: &str) -> Result<ControlTrajectory> {
    let bad = |message: String| Error::Csv {
        path: origin.to_string(),
        message,
    };
    if table.header.len() != m + 1 || table.header.first().map(String::as_str) != Some("t") {
        return Err(bad(format!(
            "expected columns t,u1..u{m}, found {}",
            table.header.join(",")
        )));
    }
    if table.rows.len() != grid.steps() {
        return Err(bad(format!(
            "expected {} control rows, found {}",
            grid.steps(),
            table.rows.len()
        )));
    }
    let times = grid.times();
    let scale = grid.horizon().abs().max(1.0);
    for (k, row) in table.rows.iter().enumerate() {
        if (row[0] - times[k]).abs() > 1e-9 * scale {
            return Err(bad(format!("row {}: time {} does not match grid time {}", k + 1, row[0], times[k])));
        }
    }
    let u = DMatrix::from_fn(grid.steps(), m, |k, i| table.rows[k][i + 1]);
    ControlTrajectory::new(grid.clone(), u)
}

/// `t` followed by the state components, one row per grid node.
pub fn trajectory_csv(grid: &TimeGrid, traj: &StateTrajectory, columns: &[String]) -> String {
    let header: Vec<String> = std::iter::once("t".to_string()).chain(columns.iter().cloned()).collect();
    let rows: Vec<Vec<f64>> = grid
        .times()
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| std::iter::once(t).chain(x.iter().copied()).collect())
        .collect();
    to_csv(&header, rows.iter().map(Vec::as_slice))
}

pub fn contours_csv(result: &VerificationResult) -> String {
    let header = ["alpha", "beta", "terminal_error"].map(String::from);
    let rows: Vec<[f64; 3]> = result
        .points
        .iter()
        .map(|p| [p.alpha, p.beta, p.terminal_error])
        .collect();
    to_csv(&header, rows.iter().map(|r| r.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0, 1e-8] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn control_round_trip() {
        let grid = TimeGrid::uniform(1.0, 7).unwrap();
        let u = DMatrix::from_fn(7, 2, |k, i| ((k * 3 + i) as f64).sin() / 7.0);
        let ctrl = ControlTrajectory::new(grid.clone(), u).unwrap();
        let text = control_csv(&ctrl);
        assert!(text.starts_with("t,u1,u2\n"));
        assert_eq!(text.lines().count(), 8);
        let back = control_from_table(&parse_csv(&text, "mem").unwrap(), &grid, 2, "mem").unwrap();
        assert_eq!(back, ctrl);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let ctrl = ControlTrajectory::constant(grid.clone(), 1, 0.5);
        let t = parse_csv(&control_csv(&ctrl), "mem").unwrap();
        assert!(control_from_table(&t, &grid, 2, "mem").is_err());
        let other = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(control_from_table(&t, &other, 1, "mem").is_err());
        let stretched = TimeGrid::uniform(2.0, 3).unwrap();
        assert!(control_from_table(&t, &stretched, 1, "mem").is_err());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(parse_csv("", "x").is_err());
        assert!(parse_csv("t,u1\n0,1,2\n", "x").is_err());
        assert!(parse_csv("t,u1\n0,abc\n", "x").is_err());
        assert_eq!(parse_csv("t,u1\n", "x").unwrap().rows.len(), 0);
    }
}
