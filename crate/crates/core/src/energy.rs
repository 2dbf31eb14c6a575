//! Energy terms of the cell and the constraint residuals of the
//! minimization problem.
//!
//! A user harvests from every phase except its own offloading phase:
//! `E^H_j = zeta_j g_j sum_{k != i} q_k t_k`.

use serde::{Deserialize, Serialize};

use crate::model::{GroupPartition, SystemConfig, UserProfile};
use crate::noma::{achievable_rate, power_closed_form, PhaseAllocation};
use crate::{ConstraintFamily, Error, Result};

/// Decision variables plus the uplink powers they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// BS broadcast power per phase (W).
    pub bs_powers: Vec<f64>,
    /// Phase durations (s).
    pub phase_times: Vec<f64>,
    /// Offloaded bits per user.
    pub offload_bits: Vec<f64>,
    /// Uplink transmit power per user (W).
    pub uplink_powers: Vec<f64>,
}

impl Allocation {
    /// Builds an allocation whose uplink powers are the minimal ones that
    /// deliver `offload_bits` in the scheduled phases.
    pub fn derive(
        bs_powers: Vec<f64>,
        phase_times: Vec<f64>,
        offload_bits: Vec<f64>,
        users: &[UserProfile],
        partition: &GroupPartition,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        let n = partition.phase_count();
        if bs_powers.len() != n || phase_times.len() != n || offload_bits.len() != users.len() {
            return Err(Error::Config("allocation dimensions do not match instance".into()));
        }
        let mut uplink_powers = vec![0.0; users.len()];
        for (i, group) in partition.groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let phase = PhaseAllocation {
                phase_time_s: phase_times[i],
                bs_power_w: bs_powers[i],
                offload_bits: group.iter().map(|&u| offload_bits[u]).collect(),
            };
            let p = power_closed_form(&phase, &partition.gains(i, users), cfg)?;
            for (&u, p) in group.iter().zip(p) {
                uplink_powers[u] = p;
            }
        }
        Ok(Self { bs_powers, phase_times, offload_bits, uplink_powers })
    }

    /// Re-derives uplink powers after the decision variables changed.
    pub fn rederive(&mut self, users: &[UserProfile], partition: &GroupPartition, cfg: &SystemConfig) -> Result<()> {
        *self = Self::derive(
            std::mem::take(&mut self.bs_powers),
            std::mem::take(&mut self.phase_times),
            std::mem::take(&mut self.offload_bits),
            users,
            partition,
            cfg,
        )?;
        Ok(())
    }
}

pub fn offload_energy(power_w: f64, phase_time_s: f64) -> f64 {
    power_w * phase_time_s
}

pub fn local_energy(user: &UserProfile, offload_bits: f64) -> Result<f64> {
    if !(0.0..=user.task_bits).contains(&offload_bits) {
        return Err(Error::Domain(format!(
            "offload of {offload_bits} bits outside [0, {}]",
            user.task_bits
        )));
    }
    Ok((user.task_bits - offload_bits) * user.cycles_per_bit * user.local_energy_per_cycle_j)
}

/// Energy harvested by a user offloading in `own_phase`.
pub fn harvested_energy(user: &UserProfile, own_phase: usize, bs_powers: &[f64], phase_times: &[f64]) -> f64 {
    let received: f64 = bs_powers
        .iter()
        .zip(phase_times)
        .enumerate()
        .filter(|&(k, _)| k != own_phase)
        .map(|(_, (q, t))| q * t)
        .sum();
    user.eh_efficiency * user.downlink_gain * received
}

/// Broadcast plus edge-computing energy at the BS.
pub fn bs_energy(
    bs_powers: &[f64],
    phase_times: &[f64],
    offload_bits: &[f64],
    users: &[UserProfile],
    cfg: &SystemConfig,
) -> f64 {
    broadcast_energy(bs_powers, phase_times) + compute_energy(offload_bits, users, cfg)
}

fn broadcast_energy(bs_powers: &[f64], phase_times: &[f64]) -> f64 {
    bs_powers.iter().zip(phase_times).map(|(q, t)| q * t).sum()
}

fn compute_energy(offload_bits: &[f64], users: &[UserProfile], cfg: &SystemConfig) -> f64 {
    cfg.bs_energy_per_cycle_j
        * users
            .iter()
            .zip(offload_bits)
            .map(|(u, d)| u.cycles_per_bit * d)
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub bs_broadcast_j: f64,
    pub bs_compute_j: f64,
    pub user_offload_j: Vec<f64>,
    pub user_local_j: Vec<f64>,
    pub user_harvest_j: Vec<f64>,
    pub total_j: f64,
}

impl EnergyBreakdown {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["bs_broadcast_j".to_string(), "bs_compute_j".to_string()];
        for name in ["user_offload_j", "user_local_j", "user_harvest_j"] {
            h.extend((0..self.user_offload_j.len()).map(|u| format!("{name}_u{u}")));
        }
        h.push("total_j".into());
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![crate::fmt_sig12(self.bs_broadcast_j), crate::fmt_sig12(self.bs_compute_j)];
        for v in [&self.user_offload_j, &self.user_local_j, &self.user_harvest_j] {
            r.extend(v.iter().map(|&x| crate::fmt_sig12(x)));
        }
        r.push(crate::fmt_sig12(self.total_j));
        r
    }
}

/// Total system energy; uplink powers are taken from `alloc` as given.
pub fn total_energy(
    alloc: &Allocation,
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
) -> Result<EnergyBreakdown> {
    let phase_of = partition.phase_of_users();
    let user_offload_j: Vec<f64> = users
        .iter()
        .enumerate()
        .map(|(u, _)| offload_energy(alloc.uplink_powers[u], alloc.phase_times[phase_of[u]]))
        .collect();
    let user_local_j = users
        .iter()
        .zip(&alloc.offload_bits)
        .map(|(u, &d)| local_energy(u, d))
        .collect::<Result<Vec<f64>>>()?;
    let user_harvest_j: Vec<f64> = users
        .iter()
        .enumerate()
        .map(|(u, user)| harvested_energy(user, phase_of[u], &alloc.bs_powers, &alloc.phase_times))
        .collect();
    let bs_broadcast_j = broadcast_energy(&alloc.bs_powers, &alloc.phase_times);
    let bs_compute_j = compute_energy(&alloc.offload_bits, users, cfg);
    let users_net: f64 = (0..users.len())
        .map(|u| user_offload_j[u] + user_local_j[u] - user_harvest_j[u])
        .sum();
    Ok(EnergyBreakdown {
        bs_broadcast_j,
        bs_compute_j,
        total_j: bs_broadcast_j + bs_compute_j + users_net,
        user_offload_j,
        user_local_j,
        user_harvest_j,
    })
}

/// Constraint slacks; a nonnegative entry means the constraint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    /// `r_j t_i - d_j` in bits.
    pub rate_slack: Vec<f64>,
    /// Harvested minus consumed energy (J).
    pub eh_slack: Vec<f64>,
    /// Spare local cycles `F_j T - C_j (R_j - d_j)`.
    pub local_latency_slack: Vec<f64>,
    pub edge_capacity_slack: f64,
    pub time_budget_slack: f64,
    /// `P_max - p_j` (W).
    pub user_power_slack: Vec<f64>,
    /// `min(q_i, Q - q_i)` (W).
    pub bs_power_slack: Vec<f64>,
    /// `min(d_j, R_j - d_j)` in bits.
    pub task_bound_slack: Vec<f64>,
}

impl ConstraintResiduals {
    /// Smallest slack of each family divided by a natural scale, so that
    /// families can be compared. Returns the worst family and its value.
    pub fn worst(&self, users: &[UserProfile], cfg: &SystemConfig) -> (ConstraintFamily, f64) {
        self.worst_of(users, cfg, true)
    }

    /// As [`Self::worst`] but over the inequality families only. Rate
    /// slacks are zero up to rounding whenever powers come from the
    /// closed form.
    pub fn worst_inequality(&self, users: &[UserProfile], cfg: &SystemConfig) -> (ConstraintFamily, f64) {
        self.worst_of(users, cfg, false)
    }

    fn worst_of(&self, users: &[UserProfile], cfg: &SystemConfig, rate: bool) -> (ConstraintFamily, f64) {
        let mut worst = (ConstraintFamily::Rate, f64::INFINITY);
        let mut take = |fam: ConstraintFamily, v: f64| {
            if v < worst.1 || v.is_nan() {
                worst = (fam, v);
            }
        };
        for (u, user) in users.iter().enumerate() {
            let scale = user.task_bits.max(1.0);
            if rate {
                take(ConstraintFamily::Rate, self.rate_slack[u] / scale);
            }
            take(ConstraintFamily::EnergyHarvesting, self.eh_slack[u] / eh_scale(user, cfg));
            take(
                ConstraintFamily::LocalLatency,
                self.local_latency_slack[u] / (user.cycles_per_bit * scale),
            );
            take(ConstraintFamily::UserPowerCap, self.user_power_slack[u] / cfg.user_max_power_w);
            take(ConstraintFamily::TaskBound, self.task_bound_slack[u] / scale);
        }
        take(ConstraintFamily::EdgeCapacity, self.edge_capacity_slack / cfg.edge_capacity_cycles);
        take(ConstraintFamily::TimeBudget, self.time_budget_slack / cfg.slot_duration_s);
        for &s in &self.bs_power_slack {
            take(ConstraintFamily::BsPowerCap, s / cfg.bs_max_power_w);
        }
        worst
    }

    /// Smallest raw slack over every constraint.
    pub fn min_slack(&self) -> f64 {
        self.rate_slack
            .iter()
            .chain(&self.eh_slack)
            .chain(&self.local_latency_slack)
            .chain(&self.user_power_slack)
            .chain(&self.bs_power_slack)
            .chain(&self.task_bound_slack)
            .chain([&self.edge_capacity_slack, &self.time_budget_slack])
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let m = self.rate_slack.len();
        let mut h = Vec::new();
        for name in ["rate_slack", "eh_slack", "local_latency_slack"] {
            h.extend((0..m).map(|u| format!("{name}_u{u}")));
        }
        h.push("edge_capacity_slack".into());
        h.push("time_budget_slack".into());
        h.extend((0..m).map(|u| format!("user_power_slack_u{u}")));
        h.extend((0..self.bs_power_slack.len()).map(|i| format!("bs_power_slack_p{i}")));
        h.extend((0..m).map(|u| format!("task_bound_slack_u{u}")));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let f = |v: &[f64]| v.iter().map(|&x| crate::fmt_sig12(x)).collect::<Vec<_>>();
        let mut r = Vec::new();
        r.extend(f(&self.rate_slack));
        r.extend(f(&self.eh_slack));
        r.extend(f(&self.local_latency_slack));
        r.push(crate::fmt_sig12(self.edge_capacity_slack));
        r.push(crate::fmt_sig12(self.time_budget_slack));
        r.extend(f(&self.user_power_slack));
        r.extend(f(&self.bs_power_slack));
        r.extend(f(&self.task_bound_slack));
        r
    }
}

/// Scale used to normalize energy-harvesting slacks.
pub(crate) fn eh_scale(user: &UserProfile, cfg: &SystemConfig) -> f64 {
    let harvest = user.eh_efficiency * user.downlink_gain * cfg.bs_max_power_w * cfg.slot_duration_s;
    harvest.max(user.full_local_energy()).max(1e-300)
}

pub fn residuals(
    alloc: &Allocation,
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
) -> ConstraintResiduals {
    let m = users.len();
    let t_slot = cfg.slot_duration_s;
    let mut rate_slack = vec![0.0; m];
    for (i, group) in partition.groups.iter().enumerate() {
        let gains = partition.gains(i, users);
        let powers: Vec<f64> = group.iter().map(|&u| alloc.uplink_powers[u]).collect();
        let t = alloc.phase_times[i];
        for (pos, &u) in group.iter().enumerate() {
            let d = alloc.offload_bits[u];
            rate_slack[u] = if t == 0.0 && d == 0.0 {
                0.0
            } else {
                achievable_rate(&gains, &powers, pos, alloc.bs_powers[i], cfg) * t - d
            };
        }
    }
    let phase_of = partition.phase_of_users();
    let eh_slack = (0..m)
        .map(|u| {
            let user = &users[u];
            let d = alloc.offload_bits[u];
            let consumed = alloc.uplink_powers[u] * alloc.phase_times[phase_of[u]]
                + (user.task_bits - d) * user.cycles_per_bit * user.local_energy_per_cycle_j;
            harvested_energy(user, phase_of[u], &alloc.bs_powers, &alloc.phase_times) - consumed
        })
        .collect();
    let local_latency_slack = users
        .iter()
        .zip(&alloc.offload_bits)
        .map(|(u, d)| u.local_capacity_cycles_per_s * t_slot - u.cycles_per_bit * (u.task_bits - d))
        .collect();
    let used_cycles: f64 = users
        .iter()
        .zip(&alloc.offload_bits)
        .map(|(u, d)| u.cycles_per_bit * d)
        .sum();
    ConstraintResiduals {
        rate_slack,
        eh_slack,
        local_latency_slack,
        edge_capacity_slack: cfg.edge_capacity_cycles - used_cycles,
        time_budget_slack: t_slot - alloc.phase_times.iter().sum::<f64>(),
        user_power_slack: alloc.uplink_powers.iter().map(|p| cfg.user_max_power_w - p).collect(),
        bs_power_slack: alloc
            .bs_powers
            .iter()
            .map(|&q| q.min(cfg.bs_max_power_w - q))
            .collect(),
        task_bound_slack: users
            .iter()
            .zip(&alloc.offload_bits)
            .map(|(u, &d)| d.min(u.task_bits - d))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn user(h: f64) -> UserProfile {
        UserProfile {
            uplink_gain: h,
            downlink_gain: h,
            eh_efficiency: 0.8,
            task_bits: 5e5,
            cycles_per_bit: 1000.0,
            local_energy_per_cycle_j: 1e-10,
            local_capacity_cycles_per_s: 1e9,
        }
    }

    #[test]
    fn offload_examples() {
        assert_eq!(offload_energy(0.0, 0.3), 0.0);
        assert_relative_eq!(offload_energy(1.0, 0.1), 0.1);
        let cfg = SystemConfig::default();
        assert_relative_eq!(offload_energy(cfg.user_max_power_w, cfg.slot_duration_s), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn local_examples() {
        let u = user(1.0);
        assert_eq!(local_energy(&u, u.task_bits).unwrap(), 0.0);
        assert_relative_eq!(local_energy(&u, 0.0).unwrap(), 0.05, max_relative = 1e-12);
        assert_relative_eq!(local_energy(&u, 2.5e5).unwrap(), 0.025, max_relative = 1e-12);
        assert!(matches!(local_energy(&u, 5e5 + 1.0), Err(Error::Domain(_))));
        assert!(local_energy(&u, -1.0).is_err());
    }

    #[test]
    fn latency_bound_arithmetic() {
        let u = user(1.0);
        assert_relative_eq!(u.min_offload_bits(0.1), 4e5);
    }

    #[test]
    fn harvest_examples() {
        let u = UserProfile { downlink_gain: 1.0, ..user(1.0) };
        assert_eq!(harvested_energy(&u, 0, &[5.0], &[0.1]), 0.0);
        // phases 1 and 2 deliver 2 J in total
        assert_relative_eq!(harvested_energy(&u, 0, &[7.0, 10.0, 5.0], &[1.0, 0.1, 0.2]), 1.6);
        let scaled = harvested_energy(&u, 0, &[21.0, 30.0, 15.0], &[1.0, 0.1, 0.2]);
        assert_relative_eq!(scaled, 4.8, max_relative = 1e-14);
    }

    #[test]
    fn bs_examples() {
        let cfg = SystemConfig::default();
        let users = vec![user(1.0); 2];
        assert_eq!(bs_energy(&[0.0, 0.0], &[0.05, 0.05], &[0.0, 0.0], &users, &cfg), 0.0);
        // 6e9 cycles at 1e-10 J/cycle
        let d = [3e6, 3e6];
        assert_relative_eq!(bs_energy(&[0.0, 0.0], &[0.05, 0.05], &d, &users, &cfg), 0.6, max_relative = 1e-12);
        let q = cfg.bs_max_power_w;
        let n = 10;
        let e = bs_energy(&vec![q; n], &vec![0.1 / n as f64; n], &[0.0, 0.0], &users, &cfg);
        assert_relative_eq!(e, 5.011872336272722, max_relative = 1e-12);
    }

    #[test]
    fn pure_local_total() {
        let cfg = SystemConfig::default();
        let users = vec![user(1e-3), user(1e-4)];
        let p = GroupPartition::new(vec![vec![0, 1]], &users).unwrap();
        let a = Allocation::derive(vec![0.0], vec![0.0], vec![0.0, 0.0], &users, &p, &cfg).unwrap();
        let e = total_energy(&a, &users, &p, &cfg).unwrap();
        assert_relative_eq!(e.total_j, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn derived_allocation_has_tight_rates() {
        let cfg = SystemConfig::default();
        let users = vec![user(1e-3), user(5e-4), user(2e-3)];
        let p = GroupPartition::new(vec![vec![0, 1], vec![2]], &users).unwrap();
        let a = Allocation::derive(vec![3.0, 1.0], vec![0.04, 0.05], vec![4e5, 4.5e5, 4.2e5], &users, &p, &cfg).unwrap();
        let r = residuals(&a, &users, &p, &cfg);
        for (u, s) in r.rate_slack.iter().enumerate() {
            assert!(s.abs() <= 1e-9 * a.offload_bits[u], "user {u}: {s}");
        }
        assert!(r.local_latency_slack.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn latency_slack_zero_at_bound() {
        let cfg = SystemConfig::default();
        let u = user(1e-3);
        let users = vec![u.clone()];
        let p = GroupPartition::singletons(&[0]);
        let d = u.task_bits - u.local_capacity_cycles_per_s * cfg.slot_duration_s / u.cycles_per_bit;
        let a = Allocation::derive(vec![1.0], vec![0.05], vec![d], &users, &p, &cfg).unwrap();
        assert!(residuals(&a, &users, &p, &cfg).local_latency_slack[0].abs() < 1e-6);
    }

    #[test]
    fn csv_rows_are_aligned() {
        let cfg = SystemConfig::default();
        let users = vec![user(1e-3), user(5e-4)];
        let p = GroupPartition::singletons(&[0, 1]);
        let a = Allocation::derive(vec![1.0, 2.0], vec![0.04, 0.05], vec![4e5, 4.5e5], &users, &p, &cfg).unwrap();
        let e = total_energy(&a, &users, &p, &cfg).unwrap();
        assert_eq!(e.csv_header().len(), e.csv_record().len());
        assert!(e.csv_header().contains(&"user_local_j_u1".to_string()));
        let r = residuals(&a, &users, &p, &cfg);
        assert_eq!(r.csv_header().len(), r.csv_record().len());
    }
}
