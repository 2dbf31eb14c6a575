//! Brute-force reference answers for tiny instances.
//!
//! Everything here is recomputed from first principles and shares no code
//! with the solver path: uplink powers come from the explicit sum
//! expansion of the SIC tail sums, rates from the Shannon formula, and the
//! objective and constraints are evaluated term by term.

use serde::{Deserialize, Serialize};

use crate::model::{GroupPartition, SystemConfig, UserProfile};
use crate::noma::PhaseAllocation;
use crate::{Error, Result};

/// Largest number of grid points a scan may visit.
pub const MAX_GRID_POINTS: f64 = 1e7;
/// Largest number of free variables a scan may have.
pub const MAX_FREE_VARIABLES: usize = 4;

/// Evenly spaced values `lo..=hi`; a single step pins the variable at `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn fixed(value: f64) -> Self {
        Self { lo: value, hi: value, steps: 1 }
    }

    pub fn span(lo: f64, hi: f64, steps: usize) -> Self {
        Self { lo, hi, steps }
    }

    pub fn is_free(&self) -> bool {
        self.steps > 1
    }

    pub fn step(&self) -> f64 {
        if self.steps > 1 {
            (self.hi - self.lo) / (self.steps - 1) as f64
        } else {
            0.0
        }
    }

    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.steps {
            self.hi.max(self.lo)
        } else {
            self.lo + k as f64 * self.step()
        }
    }
}

/// Axes over the stacked vector `(q_1..q_N, t_1..t_N, d_1..d_M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    /// Points whose normalized residuals are all `>= -tol` count as feasible.
    pub feasibility_tol: f64,
}

impl GridSpec {
    pub fn point_count(&self) -> f64 {
        self.axes.iter().map(|a| a.steps.max(1) as f64).product()
    }

    pub fn free_count(&self) -> usize {
        self.axes.iter().filter(|a| a.is_free()).count()
    }

    /// Halves every step; the refined grid contains every original point.
    pub fn refined(&self) -> Self {
        let axes = self
            .axes
            .iter()
            .map(|a| if a.is_free() { Axis { steps: 2 * a.steps - 1, ..*a } } else { *a })
            .collect();
        Self { axes, ..self.clone() }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.axes.len() != dim {
            return Err(Error::Config(format!("grid has {} axes, instance needs {dim}", self.axes.len())));
        }
        if self.free_count() > MAX_FREE_VARIABLES {
            return Err(Error::Config(format!("grid has {} free variables", self.free_count())));
        }
        if self.point_count() > MAX_GRID_POINTS {
            return Err(Error::Config(format!("grid has {:.3e} points", self.point_count())));
        }
        if self.axes.iter().any(|a| a.steps == 0 || !(a.lo <= a.hi) || !a.lo.is_finite() || !a.hi.is_finite()) {
            return Err(Error::Config("grid axes need finite lo <= hi and at least one step".into()));
        }
        if !(self.feasibility_tol >= 0.0) {
            return Err(Error::Config("feasibility tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub bs_powers: Vec<f64>,
    pub phase_times: Vec<f64>,
    pub offload_bits: Vec<f64>,
    pub objective: f64,
    /// Smallest normalized residual; positive means strictly feasible.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridOutcome {
    Best(GridPoint),
    InfeasibleEverywhere,
}

impl GridOutcome {
    pub fn best(&self) -> Option<&GridPoint> {
        match self {
            Self::Best(p) => Some(p),
            Self::InfeasibleEverywhere => None,
        }
    }
}

/// Tail sums `u_j` from the explicit expansion
/// `u_j = c sum_{l >= j} (2^{x_l} - 1) 2^{x_j + ... + x_{l-1}}`.
pub fn literal_tail_sums(gains_len: usize, bs_power_w: f64, phase_time_s: f64, bits: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    let c = cfg.noise_power_w + cfg.self_interference_coeff * bs_power_w;
    let x: Vec<f64> = bits
        .iter()
        .map(|&d| if d == 0.0 { 0.0 } else { d / (cfg.bandwidth_hz * phase_time_s) })
        .collect();
    (0..gains_len)
        .map(|j| {
            (j..gains_len)
                .map(|l| {
                    let before: f64 = x[j..l].iter().sum();
                    (2f64.powf(x[l]) - 1.0) * 2f64.powf(before)
                })
                .sum::<f64>()
                * c
        })
        .collect()
}

/// Uplink powers `(u_j - u_{j+1}) / h_j` from the explicit expansion.
pub fn literal_powers(gains: &[f64], bs_power_w: f64, phase_time_s: f64, bits: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    let u = literal_tail_sums(gains.len(), bs_power_w, phase_time_s, bits, cfg);
    (0..gains.len())
        .map(|j| {
            let next = u.get(j + 1).copied().unwrap_or(0.0);
            (u[j] - next) / gains[j]
        })
        .collect()
}

/// Shannon rates of every member computed directly from the SINR.
fn shannon_rates(gains: &[f64], powers: &[f64], bs_power_w: f64, cfg: &SystemConfig) -> Vec<f64> {
    let noise = cfg.noise_power_w + cfg.self_interference_coeff * bs_power_w;
    (0..gains.len())
        .map(|j| {
            let mut interference = noise;
            for l in j + 1..gains.len() {
                interference += gains[l] * powers[l];
            }
            cfg.bandwidth_hz * (1.0 + gains[j] * powers[j] / interference).log2()
        })
        .collect()
}

/// Whether every member delivers its bits: `r_j t >= d_j` up to a relative
/// `1e-9`.
pub fn rate_region_check(gains: &[f64], powers: &[f64], phase: &PhaseAllocation, cfg: &SystemConfig) -> bool {
    let rates = shannon_rates(gains, powers, phase.bs_power_w, cfg);
    rates
        .iter()
        .zip(&phase.offload_bits)
        .all(|(r, &d)| d <= 0.0 || r * phase.phase_time_s >= d * (1.0 - 1e-9))
}

/// Objective and smallest normalized residual of one `(q, t, d)` point.
pub fn evaluate_point(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    q: &[f64],
    t: &[f64],
    d: &[f64],
) -> (f64, f64) {
    let m = users.len();
    let mut margin = f64::INFINITY;
    let mut note = |v: f64| {
        if !(v >= margin) {
            margin = v;
        }
    };
    let mut p = vec![0.0; m];
    let mut own = vec![0; m];
    for (i, group) in partition.groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let gains: Vec<f64> = group.iter().map(|&u| users[u].uplink_gain).collect();
        let bits: Vec<f64> = group.iter().map(|&u| d[u]).collect();
        if t[i] <= 0.0 {
            if bits.iter().any(|&b| b > 0.0) {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            continue;
        }
        let powers = literal_powers(&gains, q[i], t[i], &bits, cfg);
        let phase = PhaseAllocation { phase_time_s: t[i], bs_power_w: q[i], offload_bits: bits.clone() };
        if !rate_region_check(&gains, &powers, &phase, cfg) {
            note(-1.0);
        }
        for (pos, &u) in group.iter().enumerate() {
            p[u] = powers[pos];
            own[u] = i;
            note(1.0 - powers[pos] / cfg.user_max_power_w);
        }
    }
    let mut objective = 0.0;
    for i in 0..q.len() {
        objective += q[i] * t[i];
        note(q[i] / cfg.bs_max_power_w);
        note(1.0 - q[i] / cfg.bs_max_power_w);
        note(t[i] / cfg.slot_duration_s);
    }
    let mut cycles = 0.0;
    for (u, user) in users.iter().enumerate() {
        let local = (user.task_bits - d[u]) * user.cycles_per_bit * user.local_energy_per_cycle_j;
        let mut received = 0.0;
        for k in 0..q.len() {
            if k != own[u] {
                received += q[k] * t[k];
            }
        }
        let harvest = user.eh_efficiency * user.downlink_gain * received;
        let uplink = p[u] * t[own[u]];
        objective += cfg.bs_energy_per_cycle_j * user.cycles_per_bit * d[u] + uplink + local - harvest;
        let scale = (user.eh_efficiency * user.downlink_gain * cfg.bs_max_power_w * cfg.slot_duration_s)
            .max(user.task_bits * user.cycles_per_bit * user.local_energy_per_cycle_j)
            .max(1e-300);
        note((harvest - uplink - local) / scale);
        let r = user.task_bits.max(1.0);
        note((user.local_capacity_cycles_per_s * cfg.slot_duration_s - user.cycles_per_bit * (user.task_bits - d[u]))
            / (user.cycles_per_bit * r));
        note(d[u] / r);
        note((user.task_bits - d[u]) / r);
        cycles += user.cycles_per_bit * d[u];
    }
    note(1.0 - cycles / cfg.edge_capacity_cycles);
    note(1.0 - t.iter().sum::<f64>() / cfg.slot_duration_s);
    (objective, margin)
}

/// Exhaustive scan of the grid, keeping the lowest objective among points
/// whose normalized residuals are all `>= -tol`.
pub fn grid_minimize(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    grid: &GridSpec,
) -> Result<GridOutcome> {
    let n = partition.phase_count();
    let m = users.len();
    grid.validate(2 * n + m)?;
    let counts: Vec<usize> = grid.axes.iter().map(|a| a.steps).collect();
    let mut index = vec![0usize; counts.len()];
    let mut x: Vec<f64> = grid.axes.iter().map(|a| a.value(0)).collect();
    let mut best: Option<GridPoint> = None;
    loop {
        let (q, rest) = x.split_at(n);
        let (t, d) = rest.split_at(n);
        let (objective, margin) = evaluate_point(users, partition, cfg, q, t, d);
        if margin >= -grid.feasibility_tol && best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(GridPoint {
                bs_powers: q.to_vec(),
                phase_times: t.to_vec(),
                offload_bits: d.to_vec(),
                objective,
                margin,
            });
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == counts.len() {
                return Ok(best.map_or(GridOutcome::InfeasibleEverywhere, GridOutcome::Best));
            }
            index[k] += 1;
            if index[k] < counts[k] {
                x[k] = grid.axes[k].value(index[k]);
                break;
            }
            index[k] = 0;
            x[k] = grid.axes[k].value(0);
            k += 1;
        }
    }
}

/// Repeated scans, each on a grid of the same size centred on the previous
/// best point with a span of `shrink` times the previous one and clipped to
/// the original box. Returns the final outcome and the last grid used.
pub fn grid_minimize_zoom(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    grid: &GridSpec,
    rounds: usize,
    shrink: f64,
) -> Result<(GridOutcome, GridSpec)> {
    let mut current = grid.clone();
    let mut outcome = grid_minimize(users, partition, cfg, &current)?;
    for _ in 0..rounds {
        let Some(best) = outcome.best().cloned() else { break };
        let point: Vec<f64> = best
            .bs_powers
            .iter()
            .chain(&best.phase_times)
            .chain(&best.offload_bits)
            .copied()
            .collect();
        let axes = current
            .axes
            .iter()
            .zip(&grid.axes)
            .zip(&point)
            .map(|((a, orig), &c)| {
                if !a.is_free() {
                    return *a;
                }
                let half = 0.5 * shrink * (a.hi - a.lo);
                Axis { lo: (c - half).max(orig.lo), hi: (c + half).min(orig.hi), steps: a.steps }
            })
            .collect();
        let next_grid = GridSpec { axes, feasibility_tol: current.feasibility_tol };
        let next = grid_minimize(users, partition, cfg, &next_grid)?;
        if let Some(nb) = next.best() {
            if nb.objective <= best.objective {
                outcome = next;
            }
        }
        current = next_grid;
    }
    Ok((outcome, current))
}
