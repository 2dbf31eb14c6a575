//! Block coordinate descent over BS powers `q`, phase times `t` and
//! offloaded bits `d`.
//!
//! Uplink powers are eliminated: they are always the minimal powers that
//! deliver `d` (see [`crate::noma`]), so only `(q, t, d)` remain. Each outer
//! iteration minimizes the total energy over `q` (a linear program), then
//! `t` (convex through the perspective of the exponential power law), then
//! `d`, each with the other two blocks frozen.
//!
//! The `d` block is not convex as stated when a group has more than one
//! member: the energy and power-cap constraints of an early-decoded user
//! contain `e^{a D_j} - e^{a D_{j+1}}` with `D_j` the tail sum of offloaded
//! bits, whose Hessian is indefinite. The block is therefore solved by a
//! convex-concave sequence: the subtracted exponential is linearized at an
//! anchor, which yields a convex inner restriction that is tight at the
//! anchor, and the anchor is moved to each new solution. The objective
//! itself stays exact (its group sums are convex because gains are sorted).

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::convex::{
    minimize_barrier, phase1_elastic, phase1_feasible, Affine, AffineBudget, BarrierSettings, Phase1Outcome,
    Smooth, SmoothProblem,
};
use crate::energy::{eh_scale, residuals, total_energy, Allocation, ConstraintResiduals, EnergyBreakdown};
use crate::model::{validate_instance, GroupPartition, SystemConfig, UserProfile};
use crate::noma::{min_phase_time, unit_powers};
use crate::{Certificate, ConstraintFamily, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub max_outer_iterations: usize,
    /// Stop once an outer iteration changes the objective by less than
    /// this fraction.
    pub relative_objective_tol: f64,
    pub barrier: BarrierSettings,
    pub init: InitPolicy,
    /// Cap on convex-concave rounds inside one `d` block.
    pub max_convexify_rounds: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            max_outer_iterations: 100,
            relative_objective_tol: 1e-6,
            barrier: BarrierSettings::default(),
            init: InitPolicy::default(),
            max_convexify_rounds: 30,
        }
    }
}

/// How the starting allocation is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    /// Relative distance kept from box bounds and budgets at the start.
    pub interior_margin: f64,
    /// Number of BS power levels tried for the starting guess.
    pub power_levels: usize,
    /// Rounds of elastic block-wise phase 1 before declaring infeasibility.
    pub phase1_rounds: usize,
    /// Normalized depth inside the constraints that phase 1 aims for.
    pub strict_margin: f64,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self { interior_margin: 1e-9, power_levels: 25, phase1_rounds: 50, strict_margin: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::IterationLimit => "iteration_limit",
            Self::Infeasible => "infeasible",
        }
    }
}

/// Newton steps spent in each block during one outer iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIterations {
    pub q: usize,
    pub t: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub scheme: String,
    pub status: SolveStatus,
    pub allocation: Allocation,
    /// Phase layout the allocation refers to.
    pub partition: GroupPartition,
    pub breakdown: EnergyBreakdown,
    pub residuals: ConstraintResiduals,
    /// Objective at the start point followed by one entry per outer iteration.
    pub objective_trace: Vec<f64>,
    pub block_iterations: Vec<BlockIterations>,
    pub outer_iterations: usize,
    /// Block-wise phase-1 rounds needed to make the start strictly feasible.
    pub init_phase1_rounds: usize,
    /// Wall time of the outer iterations, excluding initialization. Not
    /// serialized so that reports stay reproducible.
    #[serde(skip)]
    pub descent_seconds: f64,
}

impl SolveReport {
    pub fn total_energy(&self) -> f64 {
        self.breakdown.total_j
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: [&'static str; 11] = [
        "scheme",
        "status",
        "outer_iterations",
        "total_energy_j",
        "bs_broadcast_j",
        "bs_compute_j",
        "user_offload_j",
        "user_local_j",
        "user_harvest_j",
        "min_slack",
        "init_phase1_rounds",
    ];

    /// One-row summary matching [`Self::CSV_HEADER`].
    pub fn csv_record(&self) -> Vec<String> {
        let b = &self.breakdown;
        let sum = |v: &[f64]| crate::fmt_sig12(v.iter().sum());
        vec![
            self.scheme.clone(),
            self.status.tag().to_string(),
            self.outer_iterations.to_string(),
            crate::fmt_sig12(b.total_j),
            crate::fmt_sig12(b.bs_broadcast_j),
            crate::fmt_sig12(b.bs_compute_j),
            sum(&b.user_offload_j),
            sum(&b.user_local_j),
            sum(&b.user_harvest_j),
            crate::fmt_sig12(self.residuals.min_slack()),
            self.init_phase1_rounds.to_string(),
        ]
    }
}

/// A problem instance together with the phases in which the BS may
/// broadcast. Phases outside the mask keep zero broadcast power.
#[derive(Debug, Clone)]
pub struct Instance<'a> {
    pub users: &'a [UserProfile],
    pub partition: &'a GroupPartition,
    pub cfg: &'a SystemConfig,
    pub broadcast: Vec<bool>,
    phase_of: Vec<usize>,
}

impl<'a> Instance<'a> {
    pub fn new(users: &'a [UserProfile], partition: &'a GroupPartition, cfg: &'a SystemConfig) -> Self {
        Self::with_broadcast(users, partition, cfg, vec![true; partition.phase_count()])
    }

    pub fn with_broadcast(
        users: &'a [UserProfile],
        partition: &'a GroupPartition,
        cfg: &'a SystemConfig,
        broadcast: Vec<bool>,
    ) -> Self {
        let phase_of = partition.phase_of_users();
        Self { users, partition, cfg, broadcast, phase_of }
    }

    pub fn phase_count(&self) -> usize {
        self.partition.phase_count()
    }

    fn derive(&self, q: Vec<f64>, t: Vec<f64>, d: Vec<f64>) -> Result<Allocation> {
        Allocation::derive(q, t, d, self.users, self.partition, self.cfg)
    }

    /// Total energy with powers re-derived from `(q, t, d)`.
    pub fn objective(&self, alloc: &Allocation) -> Result<f64> {
        Ok(total_energy(alloc, self.users, self.partition, self.cfg)?.total_j)
    }

    /// Lower bound on each user's offload from the local deadline.
    fn offload_floor(&self, u: usize) -> f64 {
        self.users[u].min_offload_bits(self.cfg.slot_duration_s)
    }

    fn local_energy_per_bit(&self, u: usize) -> f64 {
        let user = &self.users[u];
        user.cycles_per_bit * user.local_energy_per_cycle_j
    }

    fn harvest_rate(&self, u: usize) -> f64 {
        self.users[u].eh_efficiency * self.users[u].downlink_gain
    }
}

/// A frozen-block subproblem: the smooth problem over the free variables
/// of one block, their indices into the full block vector, and the
/// current values of those variables.
pub struct BlockProblem {
    pub problem: SmoothProblem,
    pub vars: Vec<usize>,
    pub x0: DVector<f64>,
}

impl BlockProblem {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }
}

/// Per-phase unit powers (W of uplink power per W of interference floor).
fn phase_unit_powers(inst: &Instance<'_>, t: &[f64], d: &[f64]) -> Result<Vec<Vec<f64>>> {
    let b = inst.cfg.bandwidth_hz;
    inst.partition
        .groups
        .iter()
        .enumerate()
        .map(|(i, group)| {
            let loads = group
                .iter()
                .map(|&u| match (d[u] > 0.0, t[i] > 0.0) {
                    (false, _) => Ok(0.0),
                    (true, true) => Ok(d[u] / (b * t[i])),
                    (true, false) => Err(Error::InfeasibleDemand { bits: d[u] }),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(unit_powers(&loads, &inst.partition.gains(i, inst.users)))
        })
        .collect()
}

fn local_energy_of(inst: &Instance<'_>, u: usize, d: f64) -> f64 {
    (inst.users[u].task_bits - d) * inst.local_energy_per_bit(u)
}

/// Energy-minimal BS powers with `t` and `d` frozen. Every function of `q`
/// is affine, so the block is a linear program.
pub fn build_q_subproblem(inst: &Instance<'_>, state: &Allocation) -> Result<BlockProblem> {
    let cfg = inst.cfg;
    let (q, t, d) = (&state.bs_powers, &state.phase_times, &state.offload_bits);
    let n_phases = inst.phase_count();
    let vars: Vec<usize> = (0..n_phases).filter(|&i| inst.broadcast[i] && t[i] > 0.0).collect();
    let n = vars.len();
    let mut slot = vec![None; n_phases];
    for (k, &i) in vars.iter().enumerate() {
        slot[i] = Some(k);
    }
    let unit = phase_unit_powers(inst, t, d)?;
    let gamma = cfg.self_interference_coeff;

    // objective: per-phase coefficient of q_i plus a constant
    let mut coef = vec![0.0; n_phases];
    let mut constant = 0.0;
    for i in 0..n_phases {
        let in_group: f64 = unit[i].iter().sum();
        let others_harvest: f64 = (0..inst.users.len())
            .filter(|&u| inst.phase_of[u] != i)
            .map(|u| inst.harvest_rate(u))
            .sum();
        coef[i] = t[i] * (1.0 + gamma * in_group - others_harvest);
        constant += t[i] * cfg.noise_power_w * in_group;
    }
    for (u, user) in inst.users.iter().enumerate() {
        constant += cfg.bs_energy_per_cycle_j * user.cycles_per_bit * d[u] + local_energy_of(inst, u, d[u]);
    }
    let split = |coef: &[f64], mut offset: f64| {
        let mut c = DVector::zeros(n);
        for i in 0..n_phases {
            match slot[i] {
                Some(k) => c[k] = coef[i],
                None => offset += coef[i] * q[i],
            }
        }
        Affine::new(c, offset)
    };
    let mut problem = SmoothProblem::new(n, split(&coef, constant))
        .with_scale(DVector::from_element(n, cfg.bs_max_power_w));

    for (u, _) in inst.users.iter().enumerate() {
        let i = inst.phase_of[u];
        let pos = inst.partition.groups[i].iter().position(|&v| v == u).unwrap();
        let w = unit[i][pos];
        let scale = eh_scale(&inst.users[u], cfg);
        // consumed - harvested <= 0
        let mut c = vec![0.0; n_phases];
        for k in 0..n_phases {
            c[k] = if k == i { t[i] * gamma * w } else { -inst.harvest_rate(u) * t[k] };
        }
        let offset = t[i] * cfg.noise_power_w * w + local_energy_of(inst, u, d[u]);
        let mut g = split(&c, offset);
        g.coeffs /= scale;
        g.offset /= scale;
        problem.push(format!("eh_u{u}"), g);
        if let (Some(k), true) = (slot[i], w > 0.0 && gamma > 0.0) {
            let p = cfg.user_max_power_w;
            problem.push(
                format!("power_u{u}"),
                Affine::coordinate(n, k, gamma * w / p, cfg.noise_power_w * w / p - 1.0),
            );
        }
    }
    for k in 0..n {
        let qmax = cfg.bs_max_power_w;
        problem.push_domain(format!("q_lo{k}"), Affine::coordinate(n, k, -1.0 / qmax, 0.0));
        problem.push_domain(format!("q_hi{k}"), Affine::coordinate(n, k, 1.0 / qmax, -1.0));
    }
    let x0 = DVector::from_iterator(n, vars.iter().map(|&i| q[i]));
    Ok(BlockProblem { problem, vars, x0 })
}

/// `k t e^{beta/t} (e^{delta/t} - 1)`: time-weighted power of one user as a
/// function of its phase duration. Convex for `beta, delta >= 0`.
#[derive(Debug, Clone, Copy)]
struct PerspectiveTerm {
    var: usize,
    k: f64,
    beta: f64,
    delta: f64,
}

impl PerspectiveTerm {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        if self.delta == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let a = (self.beta / t).exp();
        let e = (self.delta / t).exp_m1();
        let s = self.beta + self.delta;
        let value = self.k * t * a * e;
        let d1 = self.k * a * (e * (1.0 - s / t) - self.delta / t);
        let d2 = self.k * a * (s * s * e + self.delta * (2.0 * self.beta + self.delta)) / (t * t * t);
        (value, d1, d2)
    }
}

/// `k e^{beta/t} (e^{delta/t} - 1) - 1`: a user's power relative to its
/// cap as a function of the phase duration. Convex and decreasing.
struct PowerInTime(PerspectiveTerm);

impl PowerInTime {
    fn parts(&self, x: &DVector<f64>) -> (f64, f64, f64, f64) {
        let p = &self.0;
        let t = x[p.var];
        (t, (p.beta / t).exp(), (p.delta / t).exp_m1(), p.beta + p.delta)
    }
}

impl Smooth for PowerInTime {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let (_, a, e, _) = self.parts(x);
        self.0.k * a * e - 1.0
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (t, a, e, s) = self.parts(x);
        let p = &self.0;
        let mut g = DVector::zeros(x.len());
        g[p.var] = -p.k * a * (s * e + p.delta) / (t * t);
        g
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (t, a, e, s) = self.parts(x);
        let p = &self.0;
        let mut h = DMatrix::zeros(x.len(), x.len());
        let inner = (2.0 * s * t + s * s) * e + 2.0 * p.delta * t + p.delta * (2.0 * p.beta + p.delta);
        h[(p.var, p.var)] = p.k * a * inner / (t * t * t * t);
        Some(h)
    }
}

/// `(lin . t + offset + sum of perspective terms) / scale`
struct TimeFunction {
    lin: DVector<f64>,
    offset: f64,
    terms: Vec<PerspectiveTerm>,
    scale: f64,
}

impl Smooth for TimeFunction {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let nonlin: f64 = self.terms.iter().map(|p| p.eval(x[p.var]).0).sum();
        (self.lin.dot(x) + self.offset + nonlin) / self.scale
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.lin.clone();
        for p in &self.terms {
            g[p.var] += p.eval(x[p.var]).1;
        }
        g / self.scale
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        if self.terms.is_empty() {
            return None;
        }
        let mut h = DMatrix::zeros(x.len(), x.len());
        for p in &self.terms {
            h[(p.var, p.var)] += p.eval(x[p.var]).2;
        }
        Some(h / self.scale)
    }
}

/// Energy-minimal phase durations with `q` and `d` frozen. A user's power
/// falls monotonically with its phase duration, so its cap is a lower
/// bound `t_i >= t_min`; it is stated through the power itself so that its
/// violation is measured like in the other blocks.
pub fn build_t_subproblem(inst: &Instance<'_>, state: &Allocation) -> Result<BlockProblem> {
    let cfg = inst.cfg;
    let (q, t, d) = (&state.bs_powers, &state.phase_times, &state.offload_bits);
    let n_phases = inst.phase_count();
    let vars: Vec<usize> = (0..n_phases).filter(|&i| t[i] > 0.0).collect();
    let n = vars.len();
    let mut slot = vec![None; n_phases];
    for (k, &i) in vars.iter().enumerate() {
        slot[i] = Some(k);
    }
    let ln2_over_b = LN_2 / cfg.bandwidth_hz;

    // perspective term of every user, keyed by user
    let mut user_term: Vec<Option<PerspectiveTerm>> = vec![None; inst.users.len()];
    for (i, group) in inst.partition.groups.iter().enumerate() {
        let floor = cfg.interference_floor(q[i]);
        let mut tail = 0.0;
        for &u in group.iter().rev() {
            if let Some(k) = slot[i] {
                user_term[u] = Some(PerspectiveTerm {
                    var: k,
                    k: floor / inst.users[u].uplink_gain,
                    beta: tail * ln2_over_b,
                    delta: d[u] * ln2_over_b,
                });
            } else if d[u] > 0.0 {
                return Err(Error::InfeasibleDemand { bits: d[u] });
            }
            tail += d[u];
        }
    }

    let mut lin = DVector::zeros(n);
    let mut constant = 0.0;
    for (i, &qi) in q.iter().enumerate() {
        let others_harvest: f64 = (0..inst.users.len())
            .filter(|&u| inst.phase_of[u] != i)
            .map(|u| inst.harvest_rate(u))
            .sum();
        let c = qi * (1.0 - others_harvest);
        match slot[i] {
            Some(k) => lin[k] = c,
            None => constant += c * t[i],
        }
    }
    for (u, user) in inst.users.iter().enumerate() {
        constant += cfg.bs_energy_per_cycle_j * user.cycles_per_bit * d[u] + local_energy_of(inst, u, d[u]);
    }
    let objective = TimeFunction {
        lin,
        offset: constant,
        terms: user_term.iter().flatten().copied().collect(),
        scale: 1.0,
    };
    let t_slot = cfg.slot_duration_s;
    let mut problem = SmoothProblem::new(n, objective)
        .with_scale(DVector::from_element(n, t_slot / n_phases as f64));

    for u in 0..inst.users.len() {
        let i = inst.phase_of[u];
        let mut lin = DVector::zeros(n);
        let mut offset = local_energy_of(inst, u, d[u]);
        for k in (0..n_phases).filter(|&k| k != i) {
            match slot[k] {
                Some(s) => lin[s] = -inst.harvest_rate(u) * q[k],
                None => offset -= inst.harvest_rate(u) * q[k] * t[k],
            }
        }
        problem.push(
            format!("eh_u{u}"),
            TimeFunction {
                lin,
                offset,
                terms: user_term[u].into_iter().collect(),
                scale: eh_scale(&inst.users[u], cfg),
            },
        );
    }
    let mut t_min_total = 0.0;
    for (k, &i) in vars.iter().enumerate() {
        let group = &inst.partition.groups[i];
        let bits: Vec<f64> = group.iter().map(|&u| d[u]).collect();
        let t_min = if group.is_empty() {
            0.0
        } else {
            min_phase_time(&inst.partition.gains(i, inst.users), q[i], &bits, cfg)
        };
        t_min_total += t_min;
        problem.push_domain(format!("t_pos{i}"), Affine::coordinate(n, k, -1.0 / t_slot, 0.0));
    }
    // power caps, equivalent to t_i >= t_min but scaled like the other blocks
    for (u, term) in user_term.iter().enumerate() {
        if let Some(term) = term.filter(|p| p.delta > 0.0) {
            problem.push(
                format!("power_u{u}"),
                PowerInTime(PerspectiveTerm { k: term.k / cfg.user_max_power_w, ..term }),
            );
        }
    }
    if t_min_total > t_slot {
        return Err(Error::Infeasible(Certificate {
            family: ConstraintFamily::TimeBudget,
            violation: t_min_total / t_slot - 1.0,
            detail: format!("minimum phase times sum to {t_min_total:.4e} s"),
        }));
    }
    let fixed_time: f64 = (0..n_phases).filter(|&i| slot[i].is_none()).map(|i| t[i]).sum();
    problem.budget = Some(AffineBudget {
        coeffs: DVector::from_element(n, 1.0 / t_slot),
        bound: 1.0 - fixed_time / t_slot,
    });
    let x0 = DVector::from_iterator(n, vars.iter().map(|&i| t[i]));
    Ok(BlockProblem { problem, vars, x0 })
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    Fixed(f64),
}

impl Slot {
    fn get(self, x: &DVector<f64>) -> f64 {
        match self {
            Slot::Var(k) => x[k],
            Slot::Fixed(v) => v,
        }
    }
}

/// `k e^{a L} (e^{a d} - 1)` with `d` the user's own bits and `L` the bits
/// of the members decoded after it. With an anchor `L0` the subtracted
/// exponential is linearized at `L0`, giving the convex majorant
/// `k e^{a L0} (e^{a (d + L - L0)} - 1 - a (L - L0))`.
#[derive(Debug, Clone)]
struct ExpTerm {
    own: Slot,
    later: Vec<Slot>,
    k: f64,
    a: f64,
    anchor: Option<f64>,
}

impl ExpTerm {
    fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        std::iter::once(self.own).chain(self.later.iter().copied())
    }

    fn parts(&self, x: &DVector<f64>) -> (f64, f64) {
        (self.own.get(x), self.later.iter().map(|s| s.get(x)).sum())
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (d, l) = self.parts(x);
        let a = self.a;
        match self.anchor {
            None => self.k * (a * l).exp() * (a * d).exp_m1(),
            Some(l0) => self.k * (a * l0).exp() * ((a * (d + l - l0)).exp_m1() - a * (l - l0)),
        }
    }

    /// Adds `weight` times the gradient into `g`.
    fn add_gradient(&self, x: &DVector<f64>, weight: f64, g: &mut DVector<f64>) {
        let (d, l) = self.parts(x);
        let a = self.a;
        let own = self.k * a * (a * (d + l)).exp();
        let later = match self.anchor {
            None => self.k * a * (a * l).exp() * (a * d).exp_m1(),
            Some(l0) => self.k * a * (a * l0).exp() * (a * (d + l - l0)).exp_m1(),
        };
        if let Slot::Var(k) = self.own {
            g[k] += weight * own;
        }
        for s in &self.later {
            if let Slot::Var(k) = s {
                g[*k] += weight * later;
            }
        }
    }

    fn add_hessian(&self, x: &DVector<f64>, weight: f64, h: &mut DMatrix<f64>) {
        let (d, l) = self.parts(x);
        let a = self.a;
        let full = self.k * a * a * (a * (d + l)).exp();
        let tail = match self.anchor {
            None => self.k * a * a * (a * l).exp() * (a * d).exp_m1(),
            Some(_) => full,
        };
        let own_var = match self.own {
            Slot::Var(k) => Some(k),
            Slot::Fixed(_) => None,
        };
        for s in self.slots() {
            let Slot::Var(r) = s else { continue };
            for s2 in self.slots() {
                let Slot::Var(c) = s2 else { continue };
                let touches_own = own_var == Some(r) || own_var == Some(c);
                h[(r, c)] += weight * if touches_own { full } else { tail };
            }
        }
    }
}

/// `(lin . d + offset + sum_k w_k term_k(d)) / scale`
struct BitsFunction {
    lin: DVector<f64>,
    offset: f64,
    terms: Vec<(f64, ExpTerm)>,
    scale: f64,
}

impl Smooth for BitsFunction {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let nonlin: f64 = self.terms.iter().map(|(w, t)| w * t.value(x)).sum();
        (self.lin.dot(x) + self.offset + nonlin) / self.scale
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.lin.clone();
        for (w, t) in &self.terms {
            t.add_gradient(x, *w, &mut g);
        }
        g / self.scale
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        if self.terms.is_empty() {
            return None;
        }
        let mut h = DMatrix::zeros(x.len(), x.len());
        for (w, t) in &self.terms {
            t.add_hessian(x, *w, &mut h);
        }
        Some(h / self.scale)
    }
}

/// Energy-minimal offloading with `q` and `t` frozen. The energy and
/// power-cap constraints of early-decoded users are replaced by their
/// convex majorants linearized at `anchor` (full-length offload vector);
/// passing the current offloads gives a restriction that is tight there.
pub fn build_d_subproblem(inst: &Instance<'_>, state: &Allocation, anchor: &[f64]) -> Result<BlockProblem> {
    let cfg = inst.cfg;
    let (q, t, d) = (&state.bs_powers, &state.phase_times, &state.offload_bits);
    let m = inst.users.len();
    let vars: Vec<usize> = (0..m)
        .filter(|&u| inst.users[u].task_bits > 0.0 && t[inst.phase_of[u]] > 0.0)
        .collect();
    let n = vars.len();
    let mut slot: Vec<Slot> = d.iter().map(|&v| Slot::Fixed(v)).collect();
    for (k, &u) in vars.iter().enumerate() {
        slot[u] = Slot::Var(k);
    }

    // exact and convexified terms per user
    let mut exact: Vec<Option<ExpTerm>> = vec![None; m];
    let mut convex: Vec<Option<ExpTerm>> = vec![None; m];
    for (i, group) in inst.partition.groups.iter().enumerate() {
        if t[i] <= 0.0 {
            if let Some(&u) = group.iter().find(|&&u| d[u] > 0.0) {
                return Err(Error::InfeasibleDemand { bits: d[u] });
            }
            continue;
        }
        let a = LN_2 / (cfg.bandwidth_hz * t[i]);
        let floor = cfg.interference_floor(q[i]);
        for (pos, &u) in group.iter().enumerate() {
            let later_users = &group[pos + 1..];
            let term = ExpTerm {
                own: slot[u],
                later: later_users.iter().map(|&v| slot[v]).collect(),
                k: floor * t[i] / inst.users[u].uplink_gain,
                a,
                anchor: None,
            };
            let anchor_tail: f64 = later_users.iter().map(|&v| anchor[v]).sum();
            convex[u] = Some(ExpTerm {
                anchor: (!later_users.is_empty()).then_some(anchor_tail),
                ..term.clone()
            });
            exact[u] = Some(term);
        }
    }

    let p0 = cfg.bs_energy_per_cycle_j;
    let mut lin = DVector::zeros(n);
    let mut constant: f64 = q.iter().zip(t).map(|(q, t)| q * t).sum();
    for (u, user) in inst.users.iter().enumerate() {
        let per_bit = user.cycles_per_bit * (p0 - user.local_energy_per_cycle_j);
        constant += user.task_bits * inst.local_energy_per_bit(u);
        constant -= crate::energy::harvested_energy(user, inst.phase_of[u], q, t);
        match slot[u] {
            Slot::Var(k) => lin[k] = per_bit,
            Slot::Fixed(v) => constant += per_bit * v,
        }
    }
    let objective = BitsFunction {
        lin,
        offset: constant,
        terms: exact.iter().flatten().map(|e| (1.0, e.clone())).collect(),
        scale: 1.0,
    };
    let scale = DVector::from_iterator(n, vars.iter().map(|&u| inst.users[u].task_bits));
    let mut problem = SmoothProblem::new(n, objective).with_scale(scale);

    for (u, user) in inst.users.iter().enumerate() {
        let i = inst.phase_of[u];
        let harvest = crate::energy::harvested_energy(user, i, q, t);
        let per_bit = inst.local_energy_per_bit(u);
        let mut lin = DVector::zeros(n);
        let mut offset = user.task_bits * per_bit - harvest;
        match slot[u] {
            Slot::Var(k) => lin[k] = -per_bit,
            Slot::Fixed(v) => offset -= per_bit * v,
        }
        let terms: Vec<(f64, ExpTerm)> = convex[u].iter().map(|c| (1.0, c.clone())).collect();
        problem.push(
            format!("eh_u{u}"),
            BitsFunction { lin, offset, terms, scale: eh_scale(user, cfg) },
        );
        if let Some(c) = &convex[u] {
            if c.slots().any(|s| matches!(s, Slot::Var(_))) {
                let p = cfg.user_max_power_w;
                problem.push(
                    format!("power_u{u}"),
                    BitsFunction {
                        lin: DVector::zeros(n),
                        offset: -1.0,
                        terms: vec![(1.0 / (t[i] * p), c.clone())],
                        scale: 1.0,
                    },
                );
            }
        }
    }
    let mut fixed_cycles = 0.0;
    let mut cycles = DVector::zeros(n);
    for (u, user) in inst.users.iter().enumerate() {
        match slot[u] {
            Slot::Var(k) => {
                let r = user.task_bits;
                let lo = inst.offload_floor(u);
                problem.push_domain(format!("d_lo{u}"), Affine::coordinate(n, k, -1.0 / r, lo / r));
                problem.push_domain(format!("d_hi{u}"), Affine::coordinate(n, k, 1.0 / r, -1.0));
                cycles[k] = user.cycles_per_bit / cfg.edge_capacity_cycles;
            }
            Slot::Fixed(v) => fixed_cycles += user.cycles_per_bit * v,
        }
    }
    problem.budget = Some(AffineBudget {
        coeffs: cycles,
        bound: 1.0 - fixed_cycles / cfg.edge_capacity_cycles,
    });
    let x0 = DVector::from_iterator(n, vars.iter().map(|&u| d[u]));
    Ok(BlockProblem { problem, vars, x0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Q,
    T,
    D,
}

impl Block {
    /// Prefixes solver errors with the block they came from.
    fn label(self, err: Error) -> Error {
        let name = match self {
            Block::Q => "q",
            Block::T => "t",
            Block::D => "d",
        };
        match err {
            Error::NotConvex(m) => Error::NotConvex(format!("{name} block: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{name} block: {m}")),
            Error::Domain(m) => Error::Domain(format!("{name} block: {m}")),
            other => other,
        }
    }
}

fn with_block(state: &Allocation, block: Block, vars: &[usize], x: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut q = state.bs_powers.clone();
    let mut t = state.phase_times.clone();
    let mut d = state.offload_bits.clone();
    let target = match block {
        Block::Q => &mut q,
        Block::T => &mut t,
        Block::D => &mut d,
    };
    for (k, &i) in vars.iter().enumerate() {
        target[i] = x[k];
    }
    (q, t, d)
}

fn build(inst: &Instance<'_>, state: &Allocation, block: Block) -> Result<BlockProblem> {
    match block {
        Block::Q => build_q_subproblem(inst, state),
        Block::T => build_t_subproblem(inst, state),
        Block::D => build_d_subproblem(inst, state, &state.offload_bits),
    }
}

/// Solves one block from the current state. Returns the new block values
/// and the Newton steps spent, or `None` when the block has no strictly
/// feasible point (the state is then kept).
fn solve_block(bp: &BlockProblem, settings: &BarrierSettings, block: Block) -> Result<Option<(DVector<f64>, usize)>> {
    solve_block_inner(bp, settings).map_err(|e| block.label(e))
}

fn solve_block_inner(bp: &BlockProblem, settings: &BarrierSettings) -> Result<Option<(DVector<f64>, usize)>> {
    if bp.dim() == 0 {
        return Ok(None);
    }
    let x0 = if bp.problem.is_strictly_feasible(&bp.x0) {
        bp.x0.clone()
    } else {
        match phase1_feasible(&bp.problem, &bp.x0, settings)? {
            Phase1Outcome::Feasible(x) => x,
            Phase1Outcome::Infeasible { .. } => return Ok(None),
        }
    };
    let out = minimize_barrier(&bp.problem, &x0, settings)?;
    Ok(Some((out.x, out.newton_steps)))
}

/// Phases with no bits to carry whose duration fell to numerical zero are
/// closed.
fn clamp_idle_phases(inst: &Instance<'_>, t: &mut [f64], d: &[f64]) {
    let floor = 1e-12 * inst.cfg.slot_duration_s;
    for (i, group) in inst.partition.groups.iter().enumerate() {
        if t[i] < floor && group.iter().all(|&u| d[u] == 0.0) {
            t[i] = 0.0;
        }
    }
}

/// Descent state shared by the solver loop.
struct Descent<'a, 'b> {
    inst: &'b Instance<'a>,
    settings: &'b SolveSettings,
    state: Allocation,
    objective: f64,
}

impl Descent<'_, '_> {
    /// Accepts a candidate if it does not increase the objective.
    fn offer(&mut self, q: Vec<f64>, t: Vec<f64>, d: Vec<f64>) -> Result<bool> {
        let candidate = self.inst.derive(q, t, d)?;
        let value = self.inst.objective(&candidate)?;
        if value <= self.objective {
            self.state = candidate;
            self.objective = value;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn step_q(&mut self) -> Result<usize> {
        let bp = build_q_subproblem(self.inst, &self.state)?;
        let Some((x, steps)) = solve_block(&bp, &self.settings.barrier, Block::Q)? else {
            return Ok(0);
        };
        let (q, t, d) = with_block(&self.state, Block::Q, &bp.vars, &x);
        self.offer(q, t, d)?;
        Ok(steps)
    }

    fn step_t(&mut self) -> Result<usize> {
        let bp = match build_t_subproblem(self.inst, &self.state) {
            Ok(bp) => bp,
            Err(Error::Infeasible(_)) => return Ok(0),
            Err(e) => return Err(e),
        };
        let Some((x, steps)) = solve_block(&bp, &self.settings.barrier, Block::T)? else {
            return Ok(0);
        };
        let (q, mut t, d) = with_block(&self.state, Block::T, &bp.vars, &x);
        clamp_idle_phases(self.inst, &mut t, &d);
        self.offer(q, t, d)?;
        Ok(steps)
    }

    /// Convex-concave rounds: re-anchor the majorants at each new point.
    fn step_d(&mut self) -> Result<usize> {
        let mut steps = 0;
        for _ in 0..self.settings.max_convexify_rounds.max(1) {
            let before = self.objective;
            let bp = build_d_subproblem(self.inst, &self.state, &self.state.offload_bits)?;
            let Some((x, s)) = solve_block(&bp, &self.settings.barrier, Block::D)? else {
                break;
            };
            steps += s;
            let (q, t, d) = with_block(&self.state, Block::D, &bp.vars, &x);
            if !self.offer(q, t, d)? {
                break;
            }
            let gain = before - self.objective;
            if gain <= 0.1 * self.settings.relative_objective_tol * self.objective.abs() {
                break;
            }
        }
        Ok(steps)
    }
}

fn infeasible_certificate(inst: &Instance<'_>, state: &Allocation) -> Certificate {
    let r = residuals(state, inst.users, inst.partition, inst.cfg);
    let (family, violation) = r.worst_inequality(inst.users, inst.cfg);
    Certificate {
        family,
        violation: -violation,
        detail: "no strictly feasible start found by elastic block-wise phase 1".into(),
    }
}

/// Largest block-problem constraint value at `state` across all blocks.
/// Largest constraint value and total violation `sum max(0, g + margin)`
/// over the block problems at `state`.
fn block_violations(inst: &Instance<'_>, state: &Allocation, margin: f64) -> Result<(f64, f64)> {
    let mut worst = f64::NEG_INFINITY;
    let mut total = 0.0;
    for block in [Block::Q, Block::T, Block::D] {
        let bp = match build(inst, state, block) {
            Ok(bp) => bp,
            Err(Error::Infeasible(c)) => {
                worst = worst.max(c.violation.max(1e-300));
                total += c.violation.max(1e-300);
                continue;
            }
            Err(e) => return Err(e),
        };
        if bp.dim() > 0 {
            worst = worst.max(bp.problem.max_violation(&bp.x0));
            for c in &bp.problem.constraints {
                total += (c.func.value(&bp.x0) + margin).max(0.0);
            }
        }
    }
    Ok((worst, total))
}

/// Interior point of the box constraints used as the starting guess:
/// equal phase times and one common BS power level for every broadcasting
/// phase, chosen from a log-spaced ladder. For each level the offloads are
/// the per-user minimizers of local plus uplink energy (decoding order
/// reversed, so later members are known), clipped to the power cap. The
/// level with the smallest normalized violation wins.
fn greedy_start(inst: &Instance<'_>, settings: &SolveSettings, floors: &[f64]) -> Result<Allocation> {
    let cfg = inst.cfg;
    let m = inst.users.len();
    let n_phases = inst.phase_count();
    let eps = settings.init.interior_margin;
    let bounds: Vec<(f64, f64)> = (0..m)
        .map(|u| {
            let (lo, r) = (floors[u], inst.users[u].task_bits);
            (lo + eps * (r - lo), r - eps * (r - lo))
        })
        .collect();
    let levels = settings.init.power_levels.max(1);
    // broadcast subsets: the k strongest groups (by weakest member), k >= 2
    let mut order: Vec<usize> = (0..n_phases).filter(|&i| inst.broadcast[i]).collect();
    let strength = |i: usize| -> f64 {
        inst.partition.groups[i].iter().map(|&u| inst.users[u].uplink_gain).fold(f64::INFINITY, f64::min)
    };
    order.sort_by(|&a, &b| strength(b).total_cmp(&strength(a)).then(a.cmp(&b)));
    let smallest = 2.min(order.len()).max(1);
    let budget = cfg.slot_duration_s * (1.0 - eps);
    let mut best_feasible: Option<(f64, Allocation)> = None;
    let mut best_margin: Option<(f64, Allocation)> = None;
    const LAMBDAS: [f64; 5] = [0.0, 1e-2, 1e-1, 1.0, 1e1];
    let t = vec![budget / n_phases as f64; n_phases];
    for k in smallest..=order.len().max(1) {
        let loud = &order[..k.min(order.len())];
        for step in 0..levels {
            let ratio = if levels == 1 { 1.0 } else { step as f64 / (levels - 1) as f64 };
            let level = cfg.bs_max_power_w * (1.0 - eps) * 10f64.powf(-6.0 * ratio);
            let idle = cfg.bs_max_power_w * 1e-9;
            let mut q: Vec<f64> = inst.broadcast.iter().map(|&b| if b { idle } else { 0.0 }).collect();
            for &i in loud {
                q[i] = level;
            }
            for lambda in LAMBDAS {
                let state = inst.derive(q.clone(), t.clone(), start_bits(inst, &q, &t, &bounds, eps, lambda))?;
                let r = residuals(&state, inst.users, inst.partition, cfg);
                let margin = r.worst_inequality(inst.users, cfg).1;
                if margin > 0.0 {
                    let objective = inst.objective(&state)?;
                    if best_feasible.as_ref().map_or(true, |(o, _)| objective < *o) {
                        best_feasible = Some((objective, state));
                    }
                } else if best_margin.as_ref().map_or(true, |(v, _)| margin > *v) {
                    best_margin = Some((margin, state));
                }
            }
        }
    }
    Ok(best_feasible.or(best_margin).expect("at least one candidate").1)
}

/// Offloaded bits for a start guess. A locally computed bit of user `u` is
/// priced at its CPU energy times `1 + lambda / (zeta_u g_u)`, the second
/// term standing for the broadcast that must be harvested to pay for it.
/// Each user offloads up to the spectral load where the marginal transmit
/// energy meets that price, capped by the power limit and clamped to the
/// interior bounds. If the edge capacity is exceeded, a per-cycle capacity
/// price is found by bisection so that the cheapest local bits come back
/// first.
fn start_bits(inst: &Instance<'_>, q: &[f64], t: &[f64], bounds: &[(f64, f64)], eps: f64, lambda: f64) -> Vec<f64> {
    let cfg = inst.cfg;
    let m = inst.users.len();
    let value: Vec<f64> =
        (0..m).map(|u| inst.local_energy_per_bit(u) * (1.0 + lambda / inst.harvest_rate(u))).collect();
    let offloads = |price: f64| -> Vec<f64> {
        let mut d = vec![0.0; m];
        for (i, group) in inst.partition.groups.iter().enumerate() {
            let c = cfg.interference_floor(q[i]);
            let mut tail_load: f64 = 0.0;
            for &u in group.iter().rev() {
                let user = &inst.users[u];
                let per_bit = value[u] - price * user.cycles_per_bit;
                let (lo, hi) = bounds[u];
                d[u] = if per_bit > 0.0 {
                    let h = user.uplink_gain;
                    let boost = tail_load.exp2();
                    let x_opt = (per_bit * cfg.bandwidth_hz * h / (c * LN_2 * boost)).log2();
                    let x_cap = (cfg.user_max_power_w * h / (c * boost)).ln_1p() / LN_2;
                    (cfg.bandwidth_hz * t[i] * x_opt.min(x_cap)).clamp(lo, hi)
                } else {
                    lo
                };
                tail_load += d[u] / (cfg.bandwidth_hz * t[i]);
            }
        }
        d
    };
    let cycles = |d: &[f64]| -> f64 { (0..m).map(|u| inst.users[u].cycles_per_bit * d[u]).sum() };
    let cap = cfg.edge_capacity_cycles * (1.0 - eps);
    let free = offloads(0.0);
    if cycles(&free) <= cap {
        return free;
    }
    let (mut lo, mut hi) = (0.0, (0..m).map(|u| value[u] / inst.users[u].cycles_per_bit).fold(0.0, f64::max));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cycles(&offloads(mid)) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    offloads(hi)
}

/// Builds a strictly feasible starting allocation: a heuristic interior
/// guess followed by elastic block-wise phase 1 until every constraint holds
/// strictly. Returns the allocation and the phase-1 rounds used.
pub fn initialize(inst: &Instance<'_>, settings: &SolveSettings) -> Result<(Allocation, usize)> {
    validate_instance(inst.users, inst.partition, inst.cfg)?;
    if inst.broadcast.len() != inst.phase_count() {
        return Err(Error::Config("broadcast mask length differs from phase count".into()));
    }
    let cfg = inst.cfg;
    let m = inst.users.len();
    let floors: Vec<f64> = (0..m).map(|u| inst.offload_floor(u)).collect();
    let forced: f64 = (0..m).map(|u| inst.users[u].cycles_per_bit * floors[u]).sum();
    if forced >= cfg.edge_capacity_cycles {
        return Err(Error::Infeasible(Certificate {
            family: ConstraintFamily::EdgeCapacity,
            violation: forced / cfg.edge_capacity_cycles - 1.0,
            detail: format!(
                "deadline-forced offloading needs {forced:.4e} cycles, capacity is {:.4e}",
                cfg.edge_capacity_cycles
            ),
        }));
    }
    let mut state = greedy_start(inst, settings, &floors)?;

    let margin = settings.init.strict_margin;
    let (mut violation, mut total) = block_violations(inst, &state, margin)?;
    let mut rounds = 0;
    let mut stalled = 0;
    while !(violation < 0.0) {
        if rounds == settings.init.phase1_rounds || stalled == 3 {
            return Err(Error::Infeasible(infeasible_certificate(inst, &state)));
        }
        rounds += 1;
        for block in [Block::Q, Block::T, Block::D] {
            let bp = match build(inst, &state, block) {
                Ok(bp) => bp,
                Err(Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            };
            if bp.dim() == 0 || bp.problem.max_violation(&bp.x0) < -margin {
                continue;
            }
            let (x, _) = phase1_elastic(&bp.problem, &bp.x0, margin, &settings.barrier).map_err(|e| block.label(e))?;
            let (q, t, d) = with_block(&state, block, &bp.vars, &x);
            state = inst.derive(q, t, d)?;
        }
        let (next_violation, next_total) = block_violations(inst, &state, margin)?;
        stalled = if next_total > total * (1.0 - 1e-4) { stalled + 1 } else { 0 };
        violation = next_violation;
        total = next_total;
    }
    Ok((state, rounds))
}

/// Runs block coordinate descent on an instance.
pub fn solve_instance(inst: &Instance<'_>, settings: &SolveSettings, scheme: &str) -> Result<SolveReport> {
    if !(settings.relative_objective_tol > 0.0) || settings.max_outer_iterations == 0 {
        return Err(Error::Config("solve settings need a positive tolerance and iteration cap".into()));
    }
    let (state, init_rounds) = initialize(inst, settings)?;
    let objective = inst.objective(&state)?;
    let mut descent = Descent { inst, settings, state, objective };
    let mut trace = vec![objective];
    let mut blocks = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    let clock = std::time::Instant::now();
    for _ in 0..settings.max_outer_iterations {
        let before = descent.objective;
        let q = descent.step_q()?;
        let t = descent.step_t()?;
        let d = descent.step_d()?;
        blocks.push(BlockIterations { q, t, d });
        trace.push(descent.objective);
        if (before - descent.objective).abs() <= settings.relative_objective_tol * before.abs() {
            status = SolveStatus::Converged;
            break;
        }
    }
    let allocation = descent.state;
    let breakdown = total_energy(&allocation, inst.users, inst.partition, inst.cfg)?;
    let residuals = residuals(&allocation, inst.users, inst.partition, inst.cfg);
    Ok(SolveReport {
        scheme: scheme.to_string(),
        status,
        allocation,
        partition: inst.partition.clone(),
        breakdown,
        residuals,
        outer_iterations: blocks.len(),
        objective_trace: trace,
        block_iterations: blocks,
        init_phase1_rounds: init_rounds,
        descent_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Minimizes total energy for the proposed full-duplex NOMA scheme.
pub fn solve(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    settings: &SolveSettings,
) -> Result<SolveReport> {
    solve_instance(&Instance::new(users, partition, cfg), settings, "proposed")
}

/// Objective change from re-solving each block once at `report`'s
/// allocation; used to check block stationarity.
pub fn block_resolve_gains(
    inst: &Instance<'_>,
    alloc: &Allocation,
    settings: &SolveSettings,
) -> Result<[f64; 3]> {
    let objective = inst.objective(alloc)?;
    let mut gains = [0.0; 3];
    for (slot, block) in [Block::Q, Block::T, Block::D].into_iter().enumerate() {
        let mut descent = Descent { inst, settings, state: alloc.clone(), objective };
        match block {
            Block::Q => descent.step_q()?,
            Block::T => descent.step_t()?,
            Block::D => descent.step_d()?,
        };
        gains[slot] = objective - descent.objective;
    }
    Ok(gains)
}
