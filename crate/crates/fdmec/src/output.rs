//! Data files written by `fdmec run`. Every float is printed with 12
//! significant digits and rows follow job order, so the same spec always
//! yields byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use fdmec_core::fmt_sig12;
use serde::Serialize;
use serde_json::json;

use crate::experiment::{run_jobs, summarize, trace_rows, ExperimentKind, ExperimentSpec, RunRecord, RunResult};
use crate::{Error, Result};

pub const RUNS_HEADER: [&str; 9] = [
    "experiment",
    "point",
    "value",
    "seed",
    "scheme",
    "status",
    "total_energy_j",
    "outer_iterations",
    "min_slack",
];
pub const FAILED_HEADER: [&str; 8] = ["experiment", "point", "value", "seed", "scheme", "status", "family", "detail"];
pub const SUMMARY_HEADER: [&str; 10] = [
    "experiment",
    "point",
    "value",
    "scheme",
    "n",
    "excluded",
    "mean_total_energy_j",
    "std_total_energy_j",
    "ci95_low_j",
    "ci95_high_j",
];
pub const TRACE_HEADER: [&str; 6] = ["seed", "edge_capacity_cycles", "scheme", "iteration", "objective_j", "normalized"];

/// Counts reported after a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunCounts {
    pub jobs: usize,
    pub solved: usize,
    pub failed: usize,
    pub paired_seeds: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(io_err(&path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Solves the experiment and writes all data files into `dir`.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path, workers: usize) -> Result<RunCounts> {
    let records = run_jobs(spec, workers)?;
    write_outputs(spec, &records, dir)
}

pub fn write_outputs(spec: &ExperimentSpec, records: &[RunRecord], dir: &Path) -> Result<RunCounts> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let points = spec.points();
    let kind = spec.kind.tag();
    let value = |p: usize| points[p].value.map(fmt_sig12).unwrap_or_default();

    let mut runs = csv_writer(&dir.join("runs.csv"))?;
    let mut failed = csv_writer(&dir.join("infeasible.csv"))?;
    runs.write_record(RUNS_HEADER)?;
    failed.write_record(FAILED_HEADER)?;
    let mut counts = RunCounts { jobs: records.len(), solved: 0, failed: 0, paired_seeds: 0 };
    for r in records {
        let head = [kind.to_string(), points[r.point].label.clone(), value(r.point), r.seed.to_string(), r.scheme.tag().into()];
        match &r.result {
            RunResult::Solved { status, total_energy_j, outer_iterations, min_slack, .. } => {
                counts.solved += 1;
                runs.write_record(head.iter().cloned().chain([
                    status.tag().to_string(),
                    fmt_sig12(*total_energy_j),
                    outer_iterations.to_string(),
                    fmt_sig12(*min_slack),
                ]))?;
            }
            RunResult::Failed { status, family, detail } => {
                counts.failed += 1;
                failed.write_record(head.iter().cloned().chain([
                    status.to_string(),
                    family.clone().unwrap_or_default(),
                    detail.clone(),
                ]))?;
            }
        }
    }
    runs.flush().map_err(io_err(dir))?;
    failed.flush().map_err(io_err(dir))?;

    let summary = summarize(spec, records);
    counts.paired_seeds = summary.iter().map(|s| s.n).min().unwrap_or(0);
    let mut out = csv_writer(&dir.join("summary.csv"))?;
    out.write_record(SUMMARY_HEADER)?;
    for s in &summary {
        out.write_record([
            kind.to_string(),
            points[s.point].label.clone(),
            value(s.point),
            s.scheme.tag().to_string(),
            s.n.to_string(),
            s.excluded.to_string(),
            fmt_sig12(s.mean_j),
            fmt_sig12(s.std_j),
            fmt_sig12(s.mean_j - s.ci95_j),
            fmt_sig12(s.mean_j + s.ci95_j),
        ])?;
    }
    out.flush().map_err(io_err(dir))?;

    if spec.kind == ExperimentKind::Convergence {
        let mut out = csv_writer(&dir.join("trace.csv"))?;
        out.write_record(TRACE_HEADER)?;
        for r in records {
            if let RunResult::Solved { trace, .. } = &r.result {
                let f = points[r.point].config.edge_capacity_cycles;
                for row in trace_rows(r.seed, f, trace) {
                    out.write_record([
                        row.seed.to_string(),
                        fmt_sig12(row.edge_capacity_cycles),
                        r.scheme.tag().to_string(),
                        row.iteration.to_string(),
                        fmt_sig12(row.objective_j),
                        fmt_sig12(row.normalized),
                    ])?;
                }
            }
        }
        out.flush().map_err(io_err(dir))?;
    }

    let metadata = json!({
        "generator": concat!("fdmec ", env!("CARGO_PKG_VERSION")),
        "experiment": spec,
        "seeds": spec.seed_list(),
        "counts": counts,
        "averaging": "means over seeds solved by every scheme at that point; 95% interval is mean +/- 1.96 s/sqrt(n)",
    });
    write_text(dir.join("metadata.json"), &serde_json::to_string_pretty(&metadata)?)?;
    write_text(dir.join("schema.json"), &serde_json::to_string_pretty(&schema())?)?;
    write_text(dir.join("plot.gp"), &plot_script(spec))?;
    Ok(counts)
}

fn schema() -> serde_json::Value {
    json!({
        "runs.csv": {
            "experiment": "experiment kind",
            "point": "sweep value or pairing strategy",
            "value": "numeric sweep value (empty for pairing)",
            "seed": "channel draw seed",
            "scheme": "proposed, oma_fd or noma_hd",
            "status": "converged or iteration_limit",
            "total_energy_j": "total system energy per slot (J)",
            "outer_iterations": "block coordinate descent iterations",
            "min_slack": "smallest normalized constraint slack of the final allocation"
        },
        "infeasible.csv": {
            "experiment": "experiment kind",
            "point": "sweep value or pairing strategy",
            "value": "numeric sweep value (empty for pairing)",
            "seed": "channel draw seed",
            "scheme": "scheme tag",
            "status": "infeasible or error",
            "family": "violated constraint family for infeasible runs",
            "detail": "solver message"
        },
        "summary.csv": {
            "experiment": "experiment kind",
            "point": "sweep value or pairing strategy",
            "value": "numeric sweep value (empty for pairing)",
            "scheme": "scheme tag",
            "n": "seeds in the mean (solved by every scheme at every point)",
            "excluded": "seeds left out of the mean",
            "mean_total_energy_j": "mean total energy (J)",
            "std_total_energy_j": "sample standard deviation (J)",
            "ci95_low_j": "lower end of the 95% normal-approximation interval (J)",
            "ci95_high_j": "upper end of the 95% normal-approximation interval (J)"
        },
        "trace.csv": {
            "seed": "channel draw seed",
            "edge_capacity_cycles": "edge capacity per slot",
            "scheme": "scheme tag",
            "iteration": "0 is the start point",
            "objective_j": "total energy after the iteration (J)",
            "normalized": "objective divided by its final value"
        }
    })
}

fn plot_script(spec: &ExperimentSpec) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset grid\n");
    match spec.kind {
        ExperimentKind::Convergence => {
            s += "set xlabel 'iteration'\nset ylabel 'normalized total energy'\n";
            s += "plot 'trace.csv' using 4:6 with linespoints\n";
        }
        ExperimentKind::Pairing => {
            s += "set style data histogram\nset style fill solid 0.6\nset ylabel 'mean total energy (J)'\n";
            s += "plot 'summary.csv' using 7:xtic(2) title 'mean'\n";
        }
        ExperimentKind::SweepT | ExperimentKind::SweepF => {
            let x = if spec.kind == ExperimentKind::SweepT { "slot duration (s)" } else { "edge capacity (cycles)" };
            s += &format!("set xlabel '{x}'\nset ylabel 'mean total energy (J)'\n");
            let plots: Vec<String> = spec
                .schemes
                .iter()
                .map(|sc| {
                    format!(
                        "'summary.csv' using 3:(strcol(4) eq '{0}' ? $7 : 1/0):9:10 with yerrorlines title '{0}'",
                        sc.tag()
                    )
                })
                .collect();
            s += &format!("plot {}\n", plots.join(", \\\n     "));
        }
    }
    s
}
