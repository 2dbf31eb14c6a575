use fdmec_core::model::SystemConfig;
use fdmec_core::noma::{achievable_rate, interference_sums, min_phase_time, power_closed_form, PhaseAllocation};
use fdmec_core::oracle::{literal_powers, literal_tail_sums, rate_region_check};
use proptest::collection::vec;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Group of 1-4 users sorted by descending gain, a phase and a config.
fn group() -> impl Strategy<Value = (Vec<f64>, PhaseAllocation, SystemConfig)> {
    (1usize..=4)
        .prop_flat_map(|n| {
            (
                vec(-9.0f64..-1.0, n),
                vec(0.0f64..5e5, n),
                1e-3f64..0.1,
                0.0f64..50.0,
                prop_oneof![Just(0.0), 1e-6f64..1e-4],
            )
        })
        .prop_map(|(mut log_gains, bits, t, q, gamma)| {
            log_gains.sort_by(|a, b| b.total_cmp(a));
            let gains = log_gains.iter().map(|e| 10f64.powf(*e)).collect();
            let cfg = SystemConfig { self_interference_coeff: gamma, ..SystemConfig::default() };
            (gains, PhaseAllocation { phase_time_s: t, bs_power_w: q, offload_bits: bits }, cfg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recursion_matches_literal_expansion((gains, phase, cfg) in group()) {
        let u = interference_sums(&phase, &gains, &cfg).unwrap();
        let lit = literal_tail_sums(gains.len(), phase.bs_power_w, phase.phase_time_s, &phase.offload_bits, &cfg);
        for (a, b) in u.iter().zip(&lit) {
            prop_assert!(rel(*a, *b) <= 1e-10, "{a} vs {b}");
        }
        let p = power_closed_form(&phase, &gains, &cfg).unwrap();
        let lp = literal_powers(&gains, phase.bs_power_w, phase.phase_time_s, &phase.offload_bits, &cfg);
        // literal powers difference two tail sums, so compare against the
        // tail scale rather than the (possibly much smaller) power
        for j in 0..gains.len() {
            prop_assert!((p[j] - lp[j]).abs() * gains[j] <= 1e-10 * lit[j].max(f64::MIN_POSITIVE), "{} vs {}", p[j], lp[j]);
        }
    }

    #[test]
    fn closed_form_powers_deliver_exactly_the_bits((gains, phase, cfg) in group()) {
        let p = power_closed_form(&phase, &gains, &cfg).unwrap();
        for (j, &d) in phase.offload_bits.iter().enumerate() {
            let delivered = achievable_rate(&gains, &p, j, phase.bs_power_w, &cfg) * phase.phase_time_s;
            prop_assert!((delivered - d).abs() <= 1e-9 * d.max(1.0), "user {j}: {delivered} vs {d}");
        }
        prop_assert!(rate_region_check(&gains, &p, &phase, &cfg));
    }

    #[test]
    fn scaled_down_powers_miss_some_rate((gains, phase, cfg) in group()) {
        prop_assume!(phase.offload_bits.iter().any(|&d| d > 1.0));
        let p: Vec<f64> = power_closed_form(&phase, &gains, &cfg).unwrap().iter().map(|x| 0.99 * x).collect();
        prop_assert!(!rate_region_check(&gains, &p, &phase, &cfg));
    }

    #[test]
    fn min_phase_time_is_tight((gains, phase, cfg) in group()) {
        prop_assume!(phase.offload_bits.iter().any(|&d| d > 1.0));
        let t = min_phase_time(&gains, phase.bs_power_w, &phase.offload_bits, &cfg);
        let at = |t: f64| {
            let ph = PhaseAllocation { phase_time_s: t, ..phase.clone() };
            power_closed_form(&ph, &gains, &cfg).unwrap().into_iter().fold(0.0, f64::max)
        };
        prop_assert!(at(t) <= cfg.user_max_power_w * (1.0 + 1e-12));
        prop_assert!(at(t - 2e-9 * cfg.slot_duration_s) > cfg.user_max_power_w);
    }
}

#[test]
fn equal_gains_and_bits_need_weakly_more_power_first() {
    let cfg = SystemConfig::default();
    for n in 2..=4 {
        let gains = vec![1e-3; n];
        let phase = PhaseAllocation { phase_time_s: 0.01, bs_power_w: 10.0, offload_bits: vec![1e5; n] };
        let p = power_closed_form(&phase, &gains, &cfg).unwrap();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "{p:?}");
    }
}
