//! Reference schemes solved with the same machinery as the proposed one.
//!
//! * OMA-FD: every user gets its own phase (no uplink NOMA), the BS still
//!   broadcasts during offloading.
//! * NOMA-HD: the BS broadcasts only in a dedicated leading phase in which
//!   nobody offloads; offloading phases carry no broadcast and hence no
//!   self-interference.

use serde::{Deserialize, Serialize};

use crate::bcd::{solve_instance, Instance, SolveReport, SolveSettings};
use crate::model::{GroupPartition, SystemConfig, UserProfile};
use crate::scenario::sort_by_uplink;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OmaFd,
    NomaHd,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::OmaFd => "oma_fd",
            Self::NomaHd => "noma_hd",
        }
    }
}

/// One phase per user, users ordered by decreasing uplink gain.
pub fn oma_partition(users: &[UserProfile]) -> GroupPartition {
    GroupPartition::singletons(&sort_by_uplink(users))
}

pub fn solve_oma_fd(users: &[UserProfile], cfg: &SystemConfig, settings: &SolveSettings) -> Result<SolveReport> {
    let partition = oma_partition(users);
    solve_instance(&Instance::new(users, &partition, cfg), settings, BaselineKind::OmaFd.tag())
}

/// Half-duplex layout: an empty broadcast phase followed by the NOMA groups.
pub fn hd_partition(partition: &GroupPartition) -> GroupPartition {
    let mut groups = Vec::with_capacity(partition.groups.len() + 1);
    groups.push(Vec::new());
    groups.extend(partition.groups.iter().cloned());
    GroupPartition { groups }
}

pub fn solve_noma_hd(
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    settings: &SolveSettings,
) -> Result<SolveReport> {
    let layout = hd_partition(partition);
    let mut mask = vec![false; layout.phase_count()];
    mask[0] = true;
    let inst = Instance::with_broadcast(users, &layout, cfg, mask);
    solve_instance(&inst, settings, BaselineKind::NomaHd.tag())
}

pub fn solve_baseline(
    kind: BaselineKind,
    users: &[UserProfile],
    partition: &GroupPartition,
    cfg: &SystemConfig,
    settings: &SolveSettings,
) -> Result<SolveReport> {
    match kind {
        BaselineKind::OmaFd => solve_oma_fd(users, cfg, settings),
        BaselineKind::NomaHd => solve_noma_hd(users, partition, cfg, settings),
    }
}
