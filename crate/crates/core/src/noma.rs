//! Uplink NOMA with successive interference cancellation.
//!
//! Inside a group the BS decodes the strongest user first, so user `j` sees
//! the later (weaker) members as interference on top of noise and the
//! residual self-interference of the concurrent broadcast. Requiring every
//! member to deliver exactly its offloaded bits fixes all powers through a
//! backward recursion on the received-power tail sums
//! `u_j = sum_{l >= j} h_l p_l`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::model::SystemConfig;
use crate::{Error, Result};

/// One offloading phase: duration, concurrent BS broadcast power and the
/// bits each group member offloads (decoding order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAllocation {
    pub phase_time_s: f64,
    pub bs_power_w: f64,
    pub offload_bits: Vec<f64>,
}

/// Shannon rate of group member `position` given all members' powers.
pub fn achievable_rate(
    gains: &[f64],
    powers: &[f64],
    position: usize,
    bs_power_w: f64,
    cfg: &SystemConfig,
) -> f64 {
    let interference: f64 = gains[position + 1..]
        .iter()
        .zip(&powers[position + 1..])
        .map(|(h, p)| h * p)
        .sum();
    let sinr = gains[position] * powers[position]
        / (interference + cfg.interference_floor(bs_power_w));
    cfg.bandwidth_hz * sinr.ln_1p() / LN_2
}

/// Spectral loads `d_j / (B t)` in bits/s/Hz. Zero demand in a zero-length
/// phase is allowed and yields zero load.
fn spectral_loads(phase: &PhaseAllocation, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let t = phase.phase_time_s;
    phase
        .offload_bits
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                Ok(0.0)
            } else if t <= 0.0 {
                Err(Error::InfeasibleDemand { bits: d })
            } else {
                Ok(d / (cfg.bandwidth_hz * t))
            }
        })
        .collect()
}

/// Received-power tail sums `u_j` for every member by the backward
/// recursion `u_j = 2^{x_j} u_{j+1} + c (2^{x_j} - 1)`, `u_{last+1} = 0`.
pub fn interference_sums(
    phase: &PhaseAllocation,
    gains: &[f64],
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    debug_assert_eq!(gains.len(), phase.offload_bits.len());
    let loads = spectral_loads(phase, cfg)?;
    let floor = cfg.interference_floor(phase.bs_power_w);
    let mut u = vec![0.0; loads.len()];
    let mut next = 0.0;
    for (j, x) in loads.iter().enumerate().rev() {
        next = x.exp2() * next + floor * (x * LN_2).exp_m1();
        u[j] = next;
    }
    Ok(u)
}

/// Transmit power of every member, `(u_j - u_{j+1}) / h_j`, evaluated in
/// the factored form `c 2^{S_{j+1}} (2^{x_j} - 1) / h_j` where `S_{j+1}` is
/// the load of all later members.
pub fn power_closed_form(
    phase: &PhaseAllocation,
    gains: &[f64],
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    debug_assert_eq!(gains.len(), phase.offload_bits.len());
    let loads = spectral_loads(phase, cfg)?;
    let floor = cfg.interference_floor(phase.bs_power_w);
    Ok(unit_powers(&loads, gains)
        .into_iter()
        .map(|w| floor * w)
        .collect())
}

/// Powers per watt of interference floor for the given spectral loads.
pub(crate) fn unit_powers(loads: &[f64], gains: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; loads.len()];
    let mut tail: f64 = 0.0;
    for j in (0..loads.len()).rev() {
        out[j] = tail.exp2() * (loads[j] * LN_2).exp_m1() / gains[j];
        tail += loads[j];
    }
    out
}

/// Shortest phase duration for which every member stays within the user
/// power cap, found by bisection (powers fall monotonically with time).
/// Returns the upper end of the final bracket, so the cap holds there.
pub fn min_phase_time(gains: &[f64], bs_power_w: f64, offload_bits: &[f64], cfg: &SystemConfig) -> f64 {
    if offload_bits.iter().all(|&d| d <= 0.0) {
        return 0.0;
    }
    let floor = cfg.interference_floor(bs_power_w);
    let cap = cfg.user_max_power_w;
    let fits = |t: f64| {
        let loads: Vec<f64> = offload_bits
            .iter()
            .map(|&d| d.max(0.0) / (cfg.bandwidth_hz * t))
            .collect();
        unit_powers(&loads, gains)
            .iter()
            .all(|w| floor * w <= cap)
    };
    // the last member sees no intra-group interference: a lower bound
    let last = gains.len() - 1;
    let single = offload_bits[last].max(0.0)
        / (cfg.bandwidth_hz * (gains[last] * cap / floor).ln_1p() / LN_2);
    let mut lo = 0.0;
    let mut hi = single.max(1e-6 * cfg.slot_duration_s);
    while !fits(hi) {
        lo = hi;
        hi *= 2.0;
    }
    let tol = 1e-9 * cfg.slot_duration_s;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// B = 1 Hz, sigma^2 = 1 W, no self-interference, P = 1 W.
    fn unit_cfg() -> SystemConfig {
        SystemConfig {
            bandwidth_hz: 1.0,
            slot_duration_s: 1.0,
            noise_power_w: 1.0,
            self_interference_coeff: 0.0,
            user_max_power_w: 1.0,
            bs_max_power_w: 1.0,
            edge_capacity_cycles: 1.0,
            bs_energy_per_cycle_j: 1.0,
        }
    }

    fn phase(t: f64, q: f64, d: &[f64]) -> PhaseAllocation {
        PhaseAllocation { phase_time_s: t, bs_power_w: q, offload_bits: d.to_vec() }
    }

    #[test]
    fn rate_examples() {
        let cfg = unit_cfg();
        assert_eq!(achievable_rate(&[1.0], &[0.0], 0, 0.0, &cfg), 0.0);
        assert_relative_eq!(achievable_rate(&[1.0], &[1.0], 0, 0.0, &cfg), 1.0);
        let gains = [1.0, 1.0];
        let powers = [2.0, 1.0];
        assert_relative_eq!(achievable_rate(&gains, &powers, 0, 0.0, &cfg), 1.0);
        assert_relative_eq!(achievable_rate(&gains, &powers, 1, 0.0, &cfg), 1.0);
    }

    #[test]
    fn recursion_examples() {
        let cfg = unit_cfg();
        let u = interference_sums(&phase(1.0, 0.0, &[0.0, 0.0]), &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
        let u = interference_sums(&phase(1.0, 0.0, &[1.0, 1.0]), &[1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(u[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(u[1], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn power_examples() {
        let cfg = unit_cfg();
        let p = power_closed_form(&phase(1.0, 0.0, &[0.0, 0.0, 0.0]), &[3.0, 2.0, 1.0], &cfg).unwrap();
        assert_eq!(p, vec![0.0; 3]);
        let p = power_closed_form(&phase(1.0, 0.0, &[1.0, 1.0]), &[1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(p[0], 2.0, max_relative = 1e-15);
        assert_relative_eq!(p[1], 1.0, max_relative = 1e-15);
        for (j, &d) in [1.0, 1.0].iter().enumerate() {
            assert_relative_eq!(achievable_rate(&[1.0, 1.0], &p, j, 0.0, &cfg), d, max_relative = 1e-12);
        }
    }

    #[test]
    fn singleton_is_shannon_inversion() {
        let cfg = SystemConfig { self_interference_coeff: 1e-3, ..unit_cfg() };
        let (h, q, d, t) = (0.7, 20.0, 3.3, 1.5);
        let p = power_closed_form(&phase(t, q, &[d]), &[h], &cfg).unwrap();
        let floor = 1.0 + 1e-3 * q;
        assert_relative_eq!(p[0], floor * ((d / t).exp2() - 1.0) / h, max_relative = 1e-13);
    }

    #[test]
    fn zero_time_handling() {
        let cfg = unit_cfg();
        let p = power_closed_form(&phase(0.0, 1.0, &[0.0, 0.0]), &[1.0, 0.5], &cfg).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
        let err = power_closed_form(&phase(0.0, 1.0, &[1.0, 0.0]), &[1.0, 0.5], &cfg);
        assert!(matches!(err, Err(Error::InfeasibleDemand { .. })));
        assert!(interference_sums(&phase(0.0, 1.0, &[0.0, 2.0]), &[1.0, 0.5], &cfg).is_err());
    }

    #[test]
    fn equal_users_ordering() {
        let cfg = unit_cfg();
        let p = power_closed_form(&phase(1.0, 0.0, &[0.5, 0.5, 0.5]), &[1.0; 3], &cfg).unwrap();
        assert!(p[0] >= p[1] && p[1] >= p[2]);
    }

    #[test]
    fn min_time_examples() {
        let cfg = unit_cfg();
        assert_eq!(min_phase_time(&[1.0], 0.0, &[0.0], &cfg), 0.0);
        let t = min_phase_time(&[1.0], 0.0, &[1.0], &cfg);
        assert!((t - 1.0).abs() <= 2e-9, "t = {t}");
        assert!(t >= 1.0);
    }

    #[test]
    fn large_loads_do_not_overflow_to_nan() {
        let cfg = unit_cfg();
        let p = power_closed_form(&phase(1.0, 0.0, &[2000.0, 1.0]), &[1.0, 1.0], &cfg).unwrap();
        assert!(p[0].is_infinite() && p[1].is_finite());
    }
}
