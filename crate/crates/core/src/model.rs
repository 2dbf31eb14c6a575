//! Physical constants, per-user parameters and NOMA group layout.
//!
//! Every quantity is stored in SI units. JSON documents may give power
//! levels as `*_dbm` fields instead of `*_w`; those are converted on load.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(level_dbm: f64) -> f64 {
    10f64.powf((level_dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub bandwidth_hz: f64,
    pub slot_duration_s: f64,
    pub noise_power_w: f64,
    /// Residual self-interference per watt broadcast, dimensionless.
    pub self_interference_coeff: f64,
    pub user_max_power_w: f64,
    pub bs_max_power_w: f64,
    /// CPU cycles the edge server can spend per slot.
    pub edge_capacity_cycles: f64,
    pub bs_energy_per_cycle_j: f64,
}

impl Default for SystemConfig {
    /// Reference cell: 10 MHz, -104 dBm noise, 30 dBm users, 47 dBm BS,
    /// 0.1 s slots and 6e9 edge cycles per slot.
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            slot_duration_s: 0.1,
            noise_power_w: dbm_to_watts(-104.0),
            self_interference_coeff: 1e-5,
            user_max_power_w: dbm_to_watts(30.0),
            bs_max_power_w: dbm_to_watts(47.0),
            edge_capacity_cycles: 6e9,
            bs_energy_per_cycle_j: 1e-10,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("slot_duration_s", self.slot_duration_s),
            ("noise_power_w", self.noise_power_w),
            ("user_max_power_w", self.user_max_power_w),
            ("bs_max_power_w", self.bs_max_power_w),
            ("edge_capacity_cycles", self.edge_capacity_cycles),
            ("bs_energy_per_cycle_j", self.bs_energy_per_cycle_j),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let g = self.self_interference_coeff;
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::Config(format!(
                "self_interference_coeff must be nonnegative, got {g}"
            )));
        }
        Ok(())
    }

    /// Noise plus residual self-interference seen by the uplink receiver
    /// while the BS broadcasts at `bs_power_w`.
    pub fn interference_floor(&self, bs_power_w: f64) -> f64 {
        self.noise_power_w + self.self_interference_coeff * bs_power_w
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: SystemConfigFile =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve()
    }
}

impl<'de> Deserialize<'de> for SystemConfig {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = SystemConfigFile::deserialize(de)?;
        raw.resolve().map_err(serde::de::Error::custom)
    }
}

/// On-disk form of [`SystemConfig`]. Missing fields take the reference
/// values; power levels may be given in watts or dBm but not both.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemConfigFile {
    bandwidth_hz: Option<f64>,
    slot_duration_s: Option<f64>,
    noise_power_w: Option<f64>,
    noise_power_dbm: Option<f64>,
    self_interference_coeff: Option<f64>,
    user_max_power_w: Option<f64>,
    user_max_power_dbm: Option<f64>,
    bs_max_power_w: Option<f64>,
    bs_max_power_dbm: Option<f64>,
    edge_capacity_cycles: Option<f64>,
    bs_energy_per_cycle_j: Option<f64>,
}

fn watts_or_dbm(name: &str, w: Option<f64>, dbm: Option<f64>, default: f64) -> Result<f64> {
    match (w, dbm) {
        (Some(_), Some(_)) => Err(Error::Config(format!(
            "both {name}_w and {name}_dbm given"
        ))),
        (Some(w), None) => Ok(w),
        (None, Some(dbm)) => Ok(dbm_to_watts(dbm)),
        (None, None) => Ok(default),
    }
}

impl SystemConfigFile {
    fn resolve(self) -> Result<SystemConfig> {
        let d = SystemConfig::default();
        let cfg = SystemConfig {
            bandwidth_hz: self.bandwidth_hz.unwrap_or(d.bandwidth_hz),
            slot_duration_s: self.slot_duration_s.unwrap_or(d.slot_duration_s),
            noise_power_w: watts_or_dbm(
                "noise_power",
                self.noise_power_w,
                self.noise_power_dbm,
                d.noise_power_w,
            )?,
            self_interference_coeff: self
                .self_interference_coeff
                .unwrap_or(d.self_interference_coeff),
            user_max_power_w: watts_or_dbm(
                "user_max_power",
                self.user_max_power_w,
                self.user_max_power_dbm,
                d.user_max_power_w,
            )?,
            bs_max_power_w: watts_or_dbm(
                "bs_max_power",
                self.bs_max_power_w,
                self.bs_max_power_dbm,
                d.bs_max_power_w,
            )?,
            edge_capacity_cycles: self.edge_capacity_cycles.unwrap_or(d.edge_capacity_cycles),
            bs_energy_per_cycle_j: self.bs_energy_per_cycle_j.unwrap_or(d.bs_energy_per_cycle_j),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-user channel, harvesting and computing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    /// Linear uplink power gain to the BS.
    pub uplink_gain: f64,
    /// Linear downlink power gain from the BS.
    pub downlink_gain: f64,
    pub eh_efficiency: f64,
    pub task_bits: f64,
    pub cycles_per_bit: f64,
    pub local_energy_per_cycle_j: f64,
    pub local_capacity_cycles_per_s: f64,
}

impl UserProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.uplink_gain > 0.0
            && self.downlink_gain > 0.0
            && self.eh_efficiency > 0.0
            && self.eh_efficiency <= 1.0
            && self.task_bits >= 0.0
            && self.cycles_per_bit > 0.0
            && self.local_energy_per_cycle_j >= 0.0
            && self.local_capacity_cycles_per_s > 0.0
            && [
                self.uplink_gain,
                self.downlink_gain,
                self.task_bits,
                self.cycles_per_bit,
                self.local_energy_per_cycle_j,
                self.local_capacity_cycles_per_s,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid user profile: {self:?}")))
        }
    }

    /// Fewest bits that must be offloaded for local computing to finish
    /// within a slot of `slot_duration_s`.
    pub fn min_offload_bits(&self, slot_duration_s: f64) -> f64 {
        let local_budget = self.local_capacity_cycles_per_s * slot_duration_s / self.cycles_per_bit;
        (self.task_bits - local_budget).max(0.0)
    }

    /// Energy to compute every task bit locally.
    pub fn full_local_energy(&self) -> f64 {
        self.task_bits * self.cycles_per_bit * self.local_energy_per_cycle_j
    }
}

/// Ordered NOMA groups. Group `i` offloads during phase `i`; members are
/// listed strongest uplink first, which is also the SIC decoding order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    /// Builds a partition and checks that it covers `0..users.len()` exactly
    /// once with non-increasing uplink gain inside every group.
    pub fn new(groups: Vec<Vec<usize>>, users: &[UserProfile]) -> Result<Self> {
        let p = Self { groups };
        p.validate(users)?;
        Ok(p)
    }

    /// Every user alone in its own phase, in the given order.
    pub fn singletons(order: &[usize]) -> Self {
        Self {
            groups: order.iter().map(|&u| vec![u]).collect(),
        }
    }

    pub fn validate(&self, users: &[UserProfile]) -> Result<()> {
        let mut seen = vec![false; users.len()];
        for group in &self.groups {
            for &u in group {
                if u >= users.len() {
                    return Err(Error::Config(format!("user index {u} out of range")));
                }
                if std::mem::replace(&mut seen[u], true) {
                    return Err(Error::Config(format!("user {u} appears twice")));
                }
            }
            for pair in group.windows(2) {
                if users[pair[0]].uplink_gain < users[pair[1]].uplink_gain {
                    return Err(Error::Config(format!(
                        "group {group:?} is not ordered by descending uplink gain"
                    )));
                }
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("user {u} is not in any group")));
        }
        Ok(())
    }

    pub fn phase_count(&self) -> usize {
        self.groups.len()
    }

    pub fn user_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Phase index of every user.
    pub fn phase_of_users(&self) -> Vec<usize> {
        let mut phase = vec![0; self.user_count()];
        for (i, group) in self.groups.iter().enumerate() {
            for &u in group {
                phase[u] = i;
            }
        }
        phase
    }

    /// Uplink gains of group `i` in decoding order.
    pub fn gains(&self, i: usize, users: &[UserProfile]) -> Vec<f64> {
        self.groups[i].iter().map(|&u| users[u].uplink_gain).collect()
    }
}

pub fn validate_instance(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
) -> Result<()> {
    cfg.validate()?;
    for u in users {
        u.validate()?;
    }
    partition.validate(users)
}
