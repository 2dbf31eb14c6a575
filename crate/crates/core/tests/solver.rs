use fdmec_core::baselines::{oma_partition, solve_noma_hd, solve_oma_fd};
use fdmec_core::bcd::{block_resolve_gains, initialize, solve, solve_instance, Instance, SolveSettings, SolveStatus};
use fdmec_core::model::{GroupPartition, SystemConfig, UserProfile};
use fdmec_core::scenario::{generate_scenario, ScenarioSpec};
use proptest::prelude::*;

fn draw(seed: u64, users: usize) -> (Vec<UserProfile>, GroupPartition, SystemConfig) {
    let cfg = SystemConfig::default();
    let spec = ScenarioSpec { user_count: users, rng_seed: seed, ..Default::default() };
    let (u, p) = generate_scenario(&spec, &cfg).unwrap();
    (u, p, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_trace_never_rises(seed in 0u64..10_000, half in 1usize..=4) {
        let (users, partition, cfg) = draw(seed, 2 * half);
        if let Ok(report) = solve(&users, &partition, &cfg, &SolveSettings::default()) {
            for w in report.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", report.objective_trace);
            }
            prop_assert!(report.residuals.worst(&users, &cfg).1 >= -1e-7);
            prop_assert_eq!(report.objective_trace.len(), report.outer_iterations + 1);
        }
    }

    #[test]
    fn converged_allocation_is_block_stationary(seed in 0u64..10_000) {
        let (users, partition, cfg) = draw(seed, 6);
        let settings = SolveSettings::default();
        if let Ok(report) = solve(&users, &partition, &cfg, &settings) {
            prop_assume!(report.status == SolveStatus::Converged);
            let inst = Instance::new(&users, &partition, &cfg);
            let gains = block_resolve_gains(&inst, &report.allocation, &settings).unwrap();
            let bound = 10.0 * settings.relative_objective_tol * report.total_energy().abs();
            for g in gains {
                prop_assert!(g < bound, "{gains:?} vs {bound}");
            }
        }
    }
}

#[test]
fn oma_is_the_proposed_solver_on_singletons() {
    let (users, _, cfg) = draw(7, 6);
    let settings = SolveSettings::default();
    let oma = solve_oma_fd(&users, &cfg, &settings).unwrap();
    let direct = solve(&users, &oma_partition(&users), &cfg, &settings).unwrap();
    assert_eq!(oma.objective_trace, direct.objective_trace);
    assert_eq!(oma.allocation, direct.allocation);
    assert_eq!(oma.scheme, "oma_fd");
}

#[test]
fn half_duplex_keeps_offloading_phases_quiet() {
    let (users, partition, cfg) = draw(2, 8);
    let report = solve_noma_hd(&users, &partition, &cfg, &SolveSettings::default()).unwrap();
    let q = &report.allocation.bs_powers;
    assert_eq!(q.len(), partition.phase_count() + 1);
    assert!(q[1..].iter().all(|&x| x == 0.0), "{q:?}");
    assert!(report.allocation.phase_times[0] > 0.0);
}

#[test]
fn generous_instances_start_without_phase_one() {
    // small tasks: everything fits locally and harvesting covers it
    let cfg = SystemConfig::default();
    for seed in 0..100 {
        let spec = ScenarioSpec {
            user_count: 4,
            rng_seed: seed,
            task_bits_range: [1e3, 2e3],
            ..Default::default()
        };
        let (users, partition) = generate_scenario(&spec, &cfg).unwrap();
        let inst = Instance::new(&users, &partition, &cfg);
        let (_, rounds) = initialize(&inst, &SolveSettings::default()).unwrap();
        assert_eq!(rounds, 0, "seed {seed}");
    }
}

#[test]
fn iteration_cap_is_reported() {
    let (users, partition, cfg) = draw(24, 20);
    let settings = SolveSettings { max_outer_iterations: 1, ..SolveSettings::default() };
    let inst = Instance::new(&users, &partition, &cfg);
    let report = solve_instance(&inst, &settings, "proposed").unwrap();
    assert_eq!(report.outer_iterations, 1);
    assert!(matches!(report.status, SolveStatus::IterationLimit | SolveStatus::Converged));
}

#[test]
fn report_serializes_with_status_and_trace() {
    let (users, partition, cfg) = draw(3, 4);
    let report = solve(&users, &partition, &cfg, &SolveSettings::default()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["status"], "converged");
    assert_eq!(json["objective_trace"].as_array().unwrap().len(), report.objective_trace.len());
    assert_eq!(report.csv_record().len(), fdmec_core::bcd::SolveReport::CSV_HEADER.len());
}
