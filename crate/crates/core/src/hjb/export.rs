use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::ZeroBetaPolicy;

use super::{Grid, GridFunction, IterationDiagnostics, PolicyField, SolverConfig, ValueField};

pub const SOLUTION_CSV: &str = "solution.csv";
pub const SOLUTION_SUMMARY: &str = "summary.json";
pub const FORMAT_VERSION: u32 = 1;

/// The JSON run summary written next to the node table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub format_version: u32,
    pub theta: f64,
    pub initial_wealth: f64,
    pub grid: Grid,
    pub config: SolverConfig,
    pub zero_beta: ZeroBetaPolicy,
    pub diagnostics: IterationDiagnostics,
    pub rows: usize,
    /// The model document the run was made with.
    #[serde(default)]
    pub model: serde_json::Value,
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

fn header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.push("phi_tilde".into());
    cols.push("phi".into());
    cols.extend((0..m).map(|j| format!("h{j}")));
    cols
}

/// Writes `solution.csv` (one row per space-time node, time-major, columns
/// `t, x0.., phi_tilde, phi, h0..`) and `summary.json` into `dir`.
pub fn write_solution(
    field: &ValueField,
    config: &SolverConfig,
    model: serde_json::Value,
    dir: &Path,
) -> io::Result<SolutionSummary> {
    fs::create_dir_all(dir)?;
    let grid = field.grid();
    let n = grid.dim();
    let m = field.policy.control_dim();
    let nodes = grid.node_count();
    let mut writer = csv::Writer::from_path(dir.join(SOLUTION_CSV)).map_err(csv_error)?;
    writer.write_record(header(n, m)).map_err(csv_error)?;
    let mut x = vec![0.0; n];
    let mut record = Vec::with_capacity(n + m + 3);
    for k in 0..=grid.time_steps() {
        for node in 0..nodes {
            grid.node_coordinates(node, &mut x);
            record.clear();
            record.push(grid.time(k).to_string());
            record.extend(x.iter().map(f64::to_string));
            record.push(field.phi_tilde.at(k, node).to_string());
            record.push(field.phi.at(k, node).to_string());
            record.extend(field.policy.at(k, node).iter().map(f64::to_string));
            writer.write_record(&record).map_err(csv_error)?;
        }
    }
    writer.flush()?;

    let summary = SolutionSummary {
        format_version: FORMAT_VERSION,
        theta: field.theta,
        initial_wealth: field.initial_wealth,
        grid: grid.clone(),
        config: *config,
        zero_beta: field.zero_beta.clone(),
        diagnostics: field.diagnostics.clone(),
        rows: (grid.time_steps() + 1) * nodes,
        model,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
    fs::write(dir.join(SOLUTION_SUMMARY), json)?;
    Ok(summary)
}

/// Reads a solution written by [`write_solution`]. The `phi` column is
/// taken as stored, not recomputed, so that consumers can check it.
pub fn load_solution(dir: &Path) -> io::Result<(ValueField, SolutionSummary)> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let summary: SolutionSummary = serde_json::from_str(&fs::read_to_string(dir.join(SOLUTION_SUMMARY))?)
        .map_err(|e| invalid(format!("{SOLUTION_SUMMARY}: {e}")))?;
    if summary.format_version != FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported format_version {}, expected {FORMAT_VERSION}",
            summary.format_version
        )));
    }
    let grid = Grid::new(
        summary.grid.center().to_vec(),
        summary.grid.half_width().to_vec(),
        summary.grid.nodes_per_axis(),
        summary.grid.t0(),
        summary.grid.horizon(),
        summary.grid.time_steps(),
    )
    .map_err(|e| invalid(e.to_string()))?;
    let n = grid.dim();
    let m = summary.zero_beta.h_check.len();
    let rows = (grid.time_steps() + 1) * grid.node_count();

    let mut reader = csv::Reader::from_path(dir.join(SOLUTION_CSV)).map_err(csv_error)?;
    let expected = header(n, m);
    let found: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(invalid(format!(
            "{SOLUTION_CSV}: header {found:?}, expected {expected:?}"
        )));
    }
    let mut phi_tilde = Vec::with_capacity(rows);
    let mut phi = Vec::with_capacity(rows);
    let mut policy = Vec::with_capacity(rows * m);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let parse = |i: usize| -> io::Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| invalid(format!("{SOLUTION_CSV}: row {}: bad column {i}", line + 2)))
        };
        phi_tilde.push(parse(n + 1)?);
        phi.push(parse(n + 2)?);
        for j in 0..m {
            policy.push(parse(n + 3 + j)?);
        }
    }
    if phi_tilde.len() != rows {
        return Err(invalid(format!(
            "{SOLUTION_CSV}: {} rows, expected {rows}",
            phi_tilde.len()
        )));
    }
    let field = ValueField {
        theta: summary.theta,
        initial_wealth: summary.initial_wealth,
        zero_beta: summary.zero_beta.clone(),
        phi_tilde: GridFunction {
            grid: grid.clone(),
            values: phi_tilde,
        },
        phi: GridFunction {
            grid: grid.clone(),
            values: phi,
        },
        policy: PolicyField::from_values(&grid, m, policy),
        diagnostics: summary.diagnostics.clone(),
    };
    Ok((field, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hjb::policy_iteration;
    use crate::model::validate_model;

    #[test]
    fn round_trip() {
        let model = validate_model(fixtures::f1_market()).unwrap();
        let grid = Grid::cube(vec![0.2], 1.5, 17, 1.0, 16).unwrap();
        let cfg = SolverConfig::default();
        let field = policy_iteration(&model, &fixtures::f1_criterion(), &grid, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = write_solution(&field, &cfg, serde_json::Value::Null, dir.path()).unwrap();
        assert_eq!(summary.rows, 17 * 17);

        let text = fs::read_to_string(dir.path().join(SOLUTION_CSV)).unwrap();
        assert_eq!(text.lines().count(), 17 * 17 + 1);
        assert_eq!(text.lines().next().unwrap(), "t,x0,phi_tilde,phi,h0");

        let (loaded, s) = load_solution(dir.path()).unwrap();
        assert_eq!(s, summary);
        assert_eq!(loaded, field);
    }

    #[test]
    fn truncated_table_is_rejected() {
        let model = validate_model(fixtures::f1_market()).unwrap();
        let grid = Grid::cube(vec![0.2], 1.5, 17, 1.0, 16).unwrap();
        let cfg = SolverConfig::default();
        let field = policy_iteration(&model, &fixtures::f1_criterion(), &grid, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_solution(&field, &cfg, serde_json::Value::Null, dir.path()).unwrap();
        let path = dir.path().join(SOLUTION_CSV);
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().take(100).collect();
        fs::write(&path, cut.join("\n")).unwrap();
        assert!(load_solution(dir.path()).is_err());
    }
}
