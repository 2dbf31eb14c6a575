//! Random cell drops: user placement, path loss with log-normal shadowing,
//! task draws and NOMA user pairing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{GroupPartition, SystemConfig, UserProfile};
use crate::{Error, Result};

/// How sorted users are combined into pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairingStrategy {
    /// Strongest with weakest, second strongest with second weakest, ...
    #[serde(alias = "sw")]
    SW,
    /// Strongest with the middle user, ...
    #[serde(alias = "sm")]
    SM,
    /// Strongest with second strongest, ...
    #[serde(alias = "ss")]
    SS,
}

impl PairingStrategy {
    pub const ALL: [PairingStrategy; 3] = [Self::SW, Self::SM, Self::SS];

    pub fn tag(self) -> &'static str {
        match self {
            Self::SW => "sw",
            Self::SM => "sm",
            Self::SS => "ss",
        }
    }
}

fn default_group_size() -> usize {
    2
}
fn default_radius() -> f64 {
    DEFAULT_CELL_RADIUS_M
}
fn default_min_distance() -> f64 {
    DEFAULT_MIN_DISTANCE_M
}
fn default_shadowing() -> f64 {
    4.0
}
fn default_pairing() -> PairingStrategy {
    PairingStrategy::SM
}
fn default_true() -> bool {
    true
}
fn default_task_bits() -> [f64; 2] {
    [100e3, 500e3]
}
fn default_cycles() -> [f64; 2] {
    [500.0, 1500.0]
}
fn default_eh_efficiency() -> f64 {
    0.8
}
fn default_local_energy() -> f64 {
    1e-10
}
fn default_local_capacity() -> f64 {
    1e9
}

/// Outer radius of the default user annulus.
pub const DEFAULT_CELL_RADIUS_M: f64 = 1.5;
/// Inner radius of the default user annulus.
pub const DEFAULT_MIN_DISTANCE_M: f64 = 1.0;

/// Recipe for one random drop of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub user_count: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_radius")]
    pub cell_radius_m: f64,
    #[serde(default = "default_min_distance")]
    pub min_distance_m: f64,
    #[serde(default = "default_shadowing")]
    pub shadowing_std_db: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_pairing")]
    pub pairing_strategy: PairingStrategy,
    /// Downlink gain equals uplink gain when set, otherwise it is drawn
    /// with its own shadowing realization.
    #[serde(default = "default_true")]
    pub reciprocal_channels: bool,
    /// Task size range in bits, drawn uniformly.
    #[serde(default = "default_task_bits")]
    pub task_bits_range: [f64; 2],
    /// CPU cycles per bit range, drawn uniformly.
    #[serde(default = "default_cycles")]
    pub cycles_per_bit_range: [f64; 2],
    #[serde(default = "default_eh_efficiency")]
    pub eh_efficiency: f64,
    #[serde(default = "default_local_energy")]
    pub local_energy_per_cycle_j: f64,
    #[serde(default = "default_local_capacity")]
    pub local_capacity_cycles_per_s: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            user_count: 20,
            group_size: default_group_size(),
            cell_radius_m: default_radius(),
            min_distance_m: default_min_distance(),
            shadowing_std_db: default_shadowing(),
            rng_seed: 0,
            pairing_strategy: default_pairing(),
            reciprocal_channels: true,
            task_bits_range: default_task_bits(),
            cycles_per_bit_range: default_cycles(),
            eh_efficiency: default_eh_efficiency(),
            local_energy_per_cycle_j: default_local_energy(),
            local_capacity_cycles_per_s: default_local_capacity(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.user_count == 0 {
            return err("user_count must be positive".into());
        }
        if self.group_size == 0 || self.user_count % self.group_size != 0 {
            return err(format!(
                "user_count {} is not divisible by group_size {}",
                self.user_count, self.group_size
            ));
        }
        if self.group_size > 2 && self.pairing_strategy != PairingStrategy::SS {
            return err(format!(
                "{:?} pairing is only defined for groups of two",
                self.pairing_strategy
            ));
        }
        if !(self.min_distance_m > 0.0 && self.cell_radius_m > self.min_distance_m) {
            return err(format!(
                "need cell_radius_m > min_distance_m > 0, got {} and {}",
                self.cell_radius_m, self.min_distance_m
            ));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return err("shadowing_std_db must be nonnegative".into());
        }
        for (name, [lo, hi]) in [
            ("task_bits_range", self.task_bits_range),
            ("cycles_per_bit_range", self.cycles_per_bit_range),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return err(format!("{name} must satisfy 0 <= lo <= hi"));
            }
        }
        if self.cycles_per_bit_range[0] <= 0.0 {
            return err("cycles_per_bit_range must be positive".into());
        }
        if !(self.eh_efficiency > 0.0 && self.eh_efficiency <= 1.0) {
            return err("eh_efficiency must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Linear power gain for a link of `distance_m` meters with `shadowing_db`
/// of extra loss: 128.1 + 37.6 log10(d_km) dB.
pub fn path_gain(distance_m: f64, shadowing_db: f64) -> f64 {
    let loss_db = 128.1 + 37.6 * (distance_m / 1000.0).log10() + shadowing_db;
    10f64.powf(-loss_db / 10.0)
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a scenario. The result depends only on `spec` (including its seed).
pub fn generate_scenario(
    spec: &ScenarioSpec,
    cfg: &SystemConfig,
) -> Result<(Vec<UserProfile>, GroupPartition)> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let shadow = Normal::new(0.0, spec.shadowing_std_db)
        .map_err(|e| Error::Config(format!("shadowing: {e}")))?;
    let (r0, r1) = (spec.min_distance_m, spec.cell_radius_m);

    let users: Vec<UserProfile> = (0..spec.user_count)
        .map(|_| {
            // uniform over the annulus area
            let distance = rng.random_range(r0 * r0..r1 * r1).sqrt();
            let uplink_gain = path_gain(distance, shadow.sample(&mut rng));
            let downlink_shadow = shadow.sample(&mut rng);
            let downlink_gain = if spec.reciprocal_channels {
                uplink_gain
            } else {
                path_gain(distance, downlink_shadow)
            };
            UserProfile {
                uplink_gain,
                downlink_gain,
                eh_efficiency: spec.eh_efficiency,
                task_bits: uniform(&mut rng, spec.task_bits_range),
                cycles_per_bit: uniform(&mut rng, spec.cycles_per_bit_range),
                local_energy_per_cycle_j: spec.local_energy_per_cycle_j,
                local_capacity_cycles_per_s: spec.local_capacity_cycles_per_s,
            }
        })
        .collect();

    let sorted = sort_by_uplink(&users);
    let partition = match spec.group_size {
        1 => GroupPartition::singletons(&sorted),
        2 => pair_users(&sorted, spec.pairing_strategy)?,
        k => GroupPartition {
            groups: sorted.chunks(k).map(<[usize]>::to_vec).collect(),
        },
    };
    partition.validate(&users)?;
    Ok((users, partition))
}

/// User indices ordered by descending uplink gain (ties by index).
pub fn sort_by_uplink(users: &[UserProfile]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..users.len()).collect();
    idx.sort_by(|&a, &b| {
        users[b]
            .uplink_gain
            .total_cmp(&users[a].uplink_gain)
            .then(a.cmp(&b))
    });
    idx
}

/// Pairs users already sorted by descending uplink gain. Each pair is
/// listed strongest first.
pub fn pair_users(sorted: &[usize], strategy: PairingStrategy) -> Result<GroupPartition> {
    let m = sorted.len();
    if m % 2 != 0 {
        return Err(Error::Config(format!("cannot pair an odd number of users ({m})")));
    }
    let half = m / 2;
    let groups = match strategy {
        PairingStrategy::SW => (0..half).map(|k| vec![sorted[k], sorted[m - 1 - k]]).collect(),
        PairingStrategy::SM => (0..half).map(|k| vec![sorted[k], sorted[half + k]]).collect(),
        PairingStrategy::SS => sorted.chunks(2).map(<[usize]>::to_vec).collect(),
    };
    Ok(GroupPartition { groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn path_gain_at_one_km() {
        assert_relative_eq!(path_gain(1000.0, 0.0), 10f64.powf(-12.81), max_relative = 1e-12);
    }

    #[test]
    fn pairing_four_users() {
        let ranked = [10, 11, 12, 13]; // a, b, c, d
        let sw = pair_users(&ranked, PairingStrategy::SW).unwrap();
        assert_eq!(sw.groups, vec![vec![10, 13], vec![11, 12]]);
        let ss = pair_users(&ranked, PairingStrategy::SS).unwrap();
        assert_eq!(ss.groups, vec![vec![10, 11], vec![12, 13]]);
        let sm = pair_users(&ranked, PairingStrategy::SM).unwrap();
        assert_eq!(sm.groups, vec![vec![10, 12], vec![11, 13]]);
    }

    #[test]
    fn pairing_rejects_odd() {
        assert!(pair_users(&[0, 1, 2], PairingStrategy::SM).is_err());
    }

    #[test]
    fn pairings_are_partitions() {
        for m in (2..=40).step_by(2) {
            let sorted: Vec<usize> = (0..m).rev().collect();
            for s in PairingStrategy::ALL {
                let p = pair_users(&sorted, s).unwrap();
                let mut all: Vec<usize> = p.groups.concat();
                all.sort_unstable();
                assert_eq!(all, (0..m).collect::<Vec<_>>());
                assert!(p.groups.iter().all(|g| g.len() == 2));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec { rng_seed: 42, ..Default::default() };
        let cfg = SystemConfig::default();
        let a = generate_scenario(&spec, &cfg).unwrap();
        let b = generate_scenario(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&ScenarioSpec { rng_seed: 43, ..spec }, &cfg).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn groups_sorted_for_many_seeds() {
        let cfg = SystemConfig::default();
        for seed in 0..100 {
            for strategy in PairingStrategy::ALL {
                let spec = ScenarioSpec {
                    rng_seed: seed,
                    pairing_strategy: strategy,
                    ..Default::default()
                };
                let (users, p) = generate_scenario(&spec, &cfg).unwrap();
                assert_eq!(p.phase_count(), 10);
                for g in &p.groups {
                    assert!(users[g[0]].uplink_gain >= users[g[1]].uplink_gain);
                }
                for u in &users {
                    assert!((100e3..=500e3).contains(&u.task_bits));
                    assert!((500.0..=1500.0).contains(&u.cycles_per_bit));
                    assert_eq!(u.uplink_gain, u.downlink_gain);
                }
            }
        }
    }

    #[test]
    fn independent_downlink_shadowing() {
        let spec = ScenarioSpec { reciprocal_channels: false, ..Default::default() };
        let (users, _) = generate_scenario(&spec, &SystemConfig::default()).unwrap();
        assert!(users.iter().any(|u| u.uplink_gain != u.downlink_gain));
    }

    #[test]
    fn invalid_specs() {
        let cfg = SystemConfig::default();
        let bad = [
            ScenarioSpec { user_count: 5, ..Default::default() },
            ScenarioSpec { min_distance_m: 0.0, ..Default::default() },
            ScenarioSpec { cell_radius_m: 0.9, ..Default::default() },
            ScenarioSpec { group_size: 4, ..Default::default() },
        ];
        for spec in bad {
            assert!(matches!(generate_scenario(&spec, &cfg), Err(Error::Config(_))));
        }
        let ok = ScenarioSpec {
            group_size: 4,
            pairing_strategy: PairingStrategy::SS,
            ..Default::default()
        };
        assert_eq!(generate_scenario(&ok, &cfg).unwrap().1.phase_count(), 5);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ScenarioSpec =
            serde_json::from_str(r#"{"user_count": 4, "pairing_strategy": "SW"}"#).unwrap();
        assert_eq!(spec.group_size, 2);
        assert_eq!(spec.pairing_strategy, PairingStrategy::SW);
        assert_eq!(spec.shadowing_std_db, 4.0);
    }
}
