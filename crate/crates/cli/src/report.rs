//! Cross-seed learning curves and the final results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use madpl_core::trainer::EpisodeLog;

use crate::error::{CliError, CliResult};

pub const CURVE_FIELDS: [&str; 7] = ["success", "turns", "inform", "match", "r_S", "r_U", "r_G"];

fn row(log: &EpisodeLog) -> [f64; 7] {
    [
        f64::from(u8::from(log.success)),
        log.turns as f64,
        log.inform_f1,
        log.match_rate,
        log.return_s,
        log.return_u,
        log.return_g,
    ]
}

fn mean_rows(rows: &[EpisodeLog]) -> [f64; 7] {
    let mut acc = [0.0; 7];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(row(r)) {
            *a += v;
        }
    }
    acc.map(|a| a / rows.len().max(1) as f64)
}

/// Per-bin means over complete bins of `bin` episodes; a trailing partial bin is dropped.
pub fn bin_run(logs: &[EpisodeLog], bin: usize) -> Vec<[f64; 7]> {
    logs.chunks_exact(bin).map(mean_rows).collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Merges runs of one method into a CSV with mean and std columns per field.
pub fn merge_curves(runs: &[(String, Vec<EpisodeLog>)], bin: usize) -> CliResult<String> {
    let binned: Vec<(&str, Vec<[f64; 7]>)> = runs.iter().map(|(name, logs)| (name.as_str(), bin_run(logs, bin))).collect();
    let (first_name, first) = binned.first().ok_or_else(|| CliError::config("no runs to merge"))?;
    if first.is_empty() {
        return Err(CliError::config(format!("run {first_name} has fewer than {bin} episodes")));
    }
    for (name, b) in &binned[1..] {
        if b.len() != first.len() {
            return Err(CliError::config(format!(
                "mismatched episode grids: {first_name} has {} points of {bin} episodes, {name} has {}",
                first.len(),
                b.len()
            )));
        }
    }
    let mut out = String::from("episode");
    for f in CURVE_FIELDS {
        let _ = write!(out, ",{f}_mean,{f}_std");
    }
    out.push('\n');
    for i in 0..first.len() {
        let _ = write!(out, "{}", (i + 1) * bin);
        for k in 0..CURVE_FIELDS.len() {
            let values: Vec<f64> = binned.iter().map(|(_, b)| b[i][k]).collect();
            let (m, s) = mean_std(&values);
            let _ = write!(out, ",{m},{s}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Table row per method: mean ± std across runs of the trailing-window averages.
pub fn results_table(groups: &BTreeMap<String, Vec<Vec<EpisodeLog>>>, window: usize) -> String {
    let width = groups.keys().map(String::len).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>4}  {:>12}  {:>12}  {:>12}  {:>12}",
        "Method", "Runs", "Turns", "Inform", "Match", "Success"
    );
    for (name, runs) in groups {
        let tails: Vec<[f64; 7]> = runs.iter().map(|logs| mean_rows(&logs[logs.len().saturating_sub(window)..])).collect();
        let cell = |k: usize, scale: f64| {
            let (m, s) = mean_std(&tails.iter().map(|t| t[k] * scale).collect::<Vec<_>>());
            format!("{m:.2}±{s:.2}")
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>4}  {:>12}  {:>12}  {:>12}  {:>12}",
            name,
            runs.len(),
            cell(1, 1.0),
            cell(2, 100.0),
            cell(3, 100.0),
            cell(0, 100.0)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logs(n: usize, success_every: usize) -> Vec<EpisodeLog> {
        (0..n)
            .map(|i| EpisodeLog {
                episode: i,
                success: i % success_every == 0,
                turns: 3,
                inform_f1: 1.0,
                match_rate: 1.0,
                return_s: 1.0,
                return_u: -1.0,
                return_g: 2.0,
            })
            .collect()
    }

    #[test]
    fn single_run_has_zero_std() {
        let csv = merge_curves(&[("a".into(), logs(20, 2))], 10).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("10,0.5,0,3,0,"));
    }

    #[test]
    fn std_across_runs() {
        let csv = merge_curves(&[("a".into(), logs(10, 1)), ("b".into(), logs(10, 100))], 10).unwrap();
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        // success: run a = 1.0, run b = 0.1
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.55);
        assert!((fields[2].parse::<f64>().unwrap() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn partial_bin_dropped_and_grids_checked() {
        assert_eq!(bin_run(&logs(25, 1), 10).len(), 2);
        merge_curves(&[("a".into(), logs(25, 1)), ("b".into(), logs(29, 1))], 10).unwrap();
        let err = merge_curves(&[("a".into(), logs(20, 1)), ("b".into(), logs(30, 1))], 10).unwrap_err();
        assert!(err.message.contains("mismatched"));
    }

    #[test]
    fn table_uses_trailing_window() {
        let mut g = BTreeMap::new();
        let mut run = logs(10, 1000);
        for l in &mut run[5..] {
            l.success = true;
        }
        g.insert("madpl".to_string(), vec![run]);
        let t = results_table(&g, 5);
        assert!(t.lines().nth(1).unwrap().contains("100.00±0.00"));
    }
}
