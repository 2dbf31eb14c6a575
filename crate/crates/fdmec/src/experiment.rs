use std::collections::BTreeSet;

use fdmec_core::baselines::{solve_noma_hd, solve_oma_fd};
use fdmec_core::bcd::{solve, SolveReport, SolveSettings, SolveStatus};
use fdmec_core::model::{GroupPartition, SystemConfig, UserProfile};
use fdmec_core::scenario::{generate_scenario, PairingStrategy, ScenarioSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// SW, SM and SS pairing at fixed parameters.
    #[serde(rename = "pairing")]
    Pairing,
    /// Per-iteration objective traces for each edge capacity in the grid.
    #[serde(rename = "convergence")]
    Convergence,
    /// Slot duration sweep (grid in seconds).
    #[serde(rename = "sweep_T")]
    SweepT,
    /// Edge capacity sweep (grid in cycles per slot).
    #[serde(rename = "sweep_F")]
    SweepF,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Pairing => "pairing",
            Self::Convergence => "convergence",
            Self::SweepT => "sweep_T",
            Self::SweepF => "sweep_F",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Proposed,
    OmaFd,
    NomaHd,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::OmaFd => "oma_fd",
            Self::NomaHd => "noma_hd",
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Proposed]
}

fn default_pairings() -> Vec<PairingStrategy> {
    PairingStrategy::ALL.to_vec()
}

fn default_seeds() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Sweep values: slot durations for `sweep_T`, edge capacities for
    /// `sweep_F` and `convergence`. Unused by `pairing`.
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Strategies compared by `pairing`.
    #[serde(default = "default_pairings")]
    pub pairings: Vec<PairingStrategy>,
    /// Number of channel draws.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub config: SystemConfig,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub settings: SolveSettings,
}

/// One sweep point: the parameters shared by all seeds and schemes there.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    /// Numeric sweep value, `None` for pairing strategies.
    pub value: Option<f64>,
    pub scenario: ScenarioSpec,
    pub config: SystemConfig,
}

impl ExperimentSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Spec(m.to_string()));
        if self.seeds == 0 {
            return err("seeds must be at least 1");
        }
        if self.schemes.is_empty() {
            return err("no schemes to run");
        }
        let distinct: BTreeSet<Scheme> = self.schemes.iter().copied().collect();
        if distinct.len() != self.schemes.len() {
            return err("schemes repeat");
        }
        match self.kind {
            ExperimentKind::Pairing => {
                if self.pairings.is_empty() {
                    return err("pairing experiment needs at least one strategy");
                }
                if self.scenario.group_size != 2 {
                    return err("pairing experiment needs group_size 2");
                }
            }
            _ => {
                if self.grid.is_empty() {
                    return err("sweep grid is empty");
                }
                if !self.grid.windows(2).all(|w| w[0] < w[1]) {
                    return err("sweep grid must be strictly increasing");
                }
                if !self.grid.iter().all(|v| v.is_finite() && *v > 0.0) {
                    return err("sweep values must be positive");
                }
            }
        }
        self.scenario.validate()?;
        self.config.validate()?;
        Ok(())
    }

    pub fn points(&self) -> Vec<Point> {
        let base = |label: String, value: Option<f64>| Point {
            label,
            value,
            scenario: self.scenario.clone(),
            config: self.config.clone(),
        };
        match self.kind {
            ExperimentKind::Pairing => self
                .pairings
                .iter()
                .map(|&s| {
                    let mut p = base(s.tag().to_string(), None);
                    p.scenario.pairing_strategy = s;
                    p
                })
                .collect(),
            ExperimentKind::SweepT => self
                .grid
                .iter()
                .map(|&v| {
                    let mut p = base(fdmec_core::fmt_sig12(v), Some(v));
                    p.config.slot_duration_s = v;
                    p
                })
                .collect(),
            ExperimentKind::SweepF | ExperimentKind::Convergence => self
                .grid
                .iter()
                .map(|&v| {
                    let mut p = base(fdmec_core::fmt_sig12(v), Some(v));
                    p.config.edge_capacity_cycles = v;
                    p
                })
                .collect(),
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.seeds).collect()
    }

    pub fn job_count(&self) -> usize {
        self.points().len() * self.seeds as usize * self.schemes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunResult {
    Solved {
        status: SolveStatus,
        total_energy_j: f64,
        outer_iterations: usize,
        min_slack: f64,
        trace: Vec<f64>,
    },
    Failed {
        /// `infeasible` or `error`.
        status: &'static str,
        family: Option<String>,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub point: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub result: RunResult,
}

impl RunRecord {
    pub fn energy(&self) -> Option<f64> {
        match self.result {
            RunResult::Solved { total_energy_j, .. } => Some(total_energy_j),
            RunResult::Failed { .. } => None,
        }
    }
}

/// Solves one scheme on one drawn instance.
pub fn solve_scheme(
    scheme: Scheme,
    scenario: &ScenarioSpec,
    cfg: &SystemConfig,
    settings: &SolveSettings,
) -> fdmec_core::Result<SolveReport> {
    let (users, partition) = generate_scenario(scenario, cfg)?;
    match scheme {
        Scheme::Proposed => solve(&users, &partition, cfg, settings),
        Scheme::OmaFd => solve_oma_fd(&users, cfg, settings),
        Scheme::NomaHd => solve_noma_hd(&users, &partition, cfg, settings),
    }
}

/// A single instance for `fdmec solve`: either a scenario recipe or an
/// explicit user list with its NOMA groups.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveInput {
    #[serde(default)]
    pub config: SystemConfig,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub settings: SolveSettings,
    pub scenario: Option<ScenarioSpec>,
    pub users: Option<Vec<UserProfile>>,
    pub groups: Option<Vec<Vec<usize>>>,
}

impl SolveInput {
    pub fn solve(&self) -> fdmec_core::Result<SolveReport> {
        let config_err = |m: &str| Err(fdmec_core::Error::Config(m.to_string()));
        match (&self.scenario, &self.users) {
            (Some(scenario), None) => {
                if self.groups.is_some() {
                    return config_err("groups come from the scenario recipe");
                }
                solve_scheme(self.scheme, scenario, &self.config, &self.settings)
            }
            (None, Some(users)) => {
                if self.scheme == Scheme::OmaFd {
                    return solve_oma_fd(users, &self.config, &self.settings);
                }
                let Some(groups) = &self.groups else {
                    return config_err("explicit users need groups");
                };
                let partition = GroupPartition::new(groups.clone(), users)?;
                match self.scheme {
                    Scheme::NomaHd => solve_noma_hd(users, &partition, &self.config, &self.settings),
                    _ => solve(users, &partition, &self.config, &self.settings),
                }
            }
            _ => config_err("give exactly one of scenario or users"),
        }
    }
}

fn record(point: usize, seed: u64, scheme: Scheme, outcome: fdmec_core::Result<SolveReport>) -> RunRecord {
    let result = match outcome {
        Ok(r) => RunResult::Solved {
            status: r.status,
            total_energy_j: r.total_energy(),
            outer_iterations: r.outer_iterations,
            min_slack: r.residuals.min_slack(),
            trace: r.objective_trace,
        },
        Err(fdmec_core::Error::Infeasible(c)) => RunResult::Failed {
            status: "infeasible",
            family: Some(c.family.to_string()),
            detail: c.detail,
        },
        Err(e) => RunResult::Failed { status: "error", family: None, detail: e.to_string() },
    };
    RunRecord { point, seed, scheme, result }
}

/// Solves every (point, seed, scheme) combination on `workers` threads.
/// Records come back in point, seed, scheme order regardless of
/// scheduling.
pub fn run_jobs(spec: &ExperimentSpec, workers: usize) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let points = spec.points();
    let mut jobs = Vec::with_capacity(spec.job_count());
    for p in 0..points.len() {
        for seed in spec.seed_list() {
            for &scheme in &spec.schemes {
                jobs.push((p, seed, scheme));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(p, seed, scheme)| {
                let point = &points[p];
                let scenario = ScenarioSpec { rng_seed: seed, ..point.scenario.clone() };
                record(p, seed, scheme, solve_scheme(scheme, &scenario, &point.config, &spec.settings))
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub point: usize,
    pub scheme: Scheme,
    /// Seeds solved by every scheme at this point.
    pub n: usize,
    /// Seeds dropped because some run for them failed at this point.
    pub excluded: usize,
    pub mean_j: f64,
    pub std_j: f64,
    /// Half width of the 95% normal-approximation interval.
    pub ci95_j: f64,
}

/// Seeds for which every run in `records` succeeded.
pub fn paired_seeds(records: &[RunRecord], point: usize) -> BTreeSet<u64> {
    let here = || records.iter().filter(|r| r.point == point);
    let all: BTreeSet<u64> = here().map(|r| r.seed).collect();
    let failed: BTreeSet<u64> = here().filter(|r| r.energy().is_none()).map(|r| r.seed).collect();
    all.difference(&failed).copied().collect()
}

/// Per-point, per-scheme means over the seeds paired at that point.
pub fn summarize(spec: &ExperimentSpec, records: &[RunRecord]) -> Vec<SummaryRow> {
    let total = spec.seeds as usize;
    let mut rows = Vec::new();
    for point in 0..spec.points().len() {
        let paired = paired_seeds(records, point);
        for &scheme in &spec.schemes {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.point == point && r.scheme == scheme && paired.contains(&r.seed))
                .filter_map(RunRecord::energy)
                .collect();
            let n = values.len();
            let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            let ci95 = if n > 1 { 1.959963984540054 * std / (n as f64).sqrt() } else { f64::NAN };
            rows.push(SummaryRow { point, scheme, n, excluded: total - n, mean_j: mean, std_j: std, ci95_j: ci95 });
        }
    }
    rows
}

/// One objective value of a convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub seed: u64,
    pub edge_capacity_cycles: f64,
    pub iteration: usize,
    pub objective_j: f64,
    /// Objective divided by its final value.
    pub normalized: f64,
}

/// Proposed-scheme objective traces for one channel draw under each edge
/// capacity. Capacities whose instance is infeasible are skipped.
pub fn emit_convergence_trace(
    scenario: &ScenarioSpec,
    cfg: &SystemConfig,
    settings: &SolveSettings,
    seed: u64,
    capacities: &[f64],
) -> Result<Vec<TraceRow>> {
    let scenario = ScenarioSpec { rng_seed: seed, ..scenario.clone() };
    let mut rows = Vec::new();
    for &f in capacities {
        let cfg = SystemConfig { edge_capacity_cycles: f, ..cfg.clone() };
        let report = match solve_scheme(Scheme::Proposed, &scenario, &cfg, settings) {
            Ok(r) => r,
            Err(e) if e.is_infeasible() => continue,
            Err(e) => return Err(e.into()),
        };
        rows.extend(trace_rows(seed, f, &report.objective_trace));
    }
    Ok(rows)
}

pub(crate) fn trace_rows(seed: u64, f: f64, trace: &[f64]) -> Vec<TraceRow> {
    let last = trace.last().copied().unwrap_or(f64::NAN);
    trace
        .iter()
        .enumerate()
        .map(|(iteration, &objective_j)| TraceRow {
            seed,
            edge_capacity_cycles: f,
            iteration,
            objective_j,
            normalized: objective_j / last,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tags_round_trip() {
        for kind in [ExperimentKind::Pairing, ExperimentKind::Convergence, ExperimentKind::SweepT, ExperimentKind::SweepF] {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.tag()));
        }
    }

    #[test]
    fn validation() {
        let good = ExperimentSpec::from_json_str(r#"{"kind": "sweep_T", "grid": [0.05, 0.1], "seeds": 2}"#).unwrap();
        assert_eq!(good.job_count(), 4);
        for bad in [
            r#"{"kind": "sweep_T", "grid": [], "seeds": 2}"#,
            r#"{"kind": "sweep_T", "grid": [0.1, 0.05]}"#,
            r#"{"kind": "sweep_F", "grid": [1e9], "seeds": 0}"#,
            r#"{"kind": "sweep_F", "grid": [1e9], "schemes": []}"#,
            r#"{"kind": "sweep_F", "grid": [1e9], "schemes": ["proposed", "proposed"]}"#,
            r#"{"kind": "pairing", "pairings": []}"#,
            r#"{"kind": "pairing", "colour": 3}"#,
        ] {
            assert!(ExperimentSpec::from_json_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn points_set_the_swept_parameter() {
        let spec = ExperimentSpec::from_json_str(r#"{"kind": "sweep_F", "grid": [1e9, 2e9]}"#).unwrap();
        let pts = spec.points();
        assert_eq!(pts[1].config.edge_capacity_cycles, 2e9);
        assert_eq!(pts[1].value, Some(2e9));
        let spec = ExperimentSpec::from_json_str(r#"{"kind": "pairing"}"#).unwrap();
        let tags: Vec<_> = spec.points().iter().map(|p| p.scenario.pairing_strategy).collect();
        assert_eq!(tags, PairingStrategy::ALL.to_vec());
    }

    #[test]
    fn pairing_drops_seeds_failing_at_the_same_point() {
        let ok = |point, seed, e| RunRecord {
            point,
            seed,
            scheme: Scheme::Proposed,
            result: RunResult::Solved {
                status: SolveStatus::Converged,
                total_energy_j: e,
                outer_iterations: 1,
                min_slack: 0.0,
                trace: vec![e],
            },
        };
        let bad = RunRecord {
            point: 1,
            seed: 2,
            scheme: Scheme::Proposed,
            result: RunResult::Failed { status: "infeasible", family: None, detail: String::new() },
        };
        let records = vec![ok(0, 1, 1.0), ok(0, 2, 5.0), ok(1, 1, 3.0), bad];
        assert_eq!(paired_seeds(&records, 0), BTreeSet::from([1, 2]));
        assert_eq!(paired_seeds(&records, 1), BTreeSet::from([1]));
        let spec = ExperimentSpec::from_json_str(r#"{"kind": "sweep_T", "grid": [0.1, 0.2], "seeds": 2, "first_seed": 1}"#)
            .unwrap();
        let rows = summarize(&spec, &records);
        assert_eq!(rows[0].mean_j, 3.0);
        assert_eq!(rows[1].mean_j, 3.0);
        assert_eq!(rows[0].excluded, 0);
        assert_eq!(rows[1].excluded, 1);
    }

    #[test]
    fn trace_is_normalized_by_final_value() {
        let rows = trace_rows(3, 6e9, &[4.0, 2.5, 2.0]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].normalized, 2.0);
        assert_eq!(rows[2].normalized, 1.0);
    }
}
