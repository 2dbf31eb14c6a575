use fdmec_core::baselines::hd_partition;
use fdmec_core::bcd::{block_resolve_gains, build_t_subproblem, initialize, solve, Instance, SolveSettings};
use fdmec_core::convex::{minimize_barrier, BarrierSettings};
use fdmec_core::model::{GroupPartition, SystemConfig, UserProfile};
use fdmec_core::oracle::{evaluate_point, grid_minimize, grid_minimize_zoom, Axis, GridOutcome, GridSpec};
use fdmec_core::scenario::{generate_scenario, sort_by_uplink, ScenarioSpec};

fn users(seed: u64, count: usize) -> Vec<UserProfile> {
    let spec = ScenarioSpec { user_count: count, group_size: 1, rng_seed: seed, ..Default::default() };
    generate_scenario(&spec, &SystemConfig::default()).unwrap().0
}

/// Edge capacity for about half of all task cycles, never below the
/// deadline-forced load.
fn tight_config(users: &[UserProfile]) -> SystemConfig {
    let base = SystemConfig::default();
    let total: f64 = users.iter().map(|u| u.cycles_per_bit * u.task_bits).sum();
    let forced: f64 = users.iter().map(|u| u.cycles_per_bit * u.min_offload_bits(base.slot_duration_s)).sum();
    SystemConfig { edge_capacity_cycles: (0.5 * total).max(1.05 * forced), ..base }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Minimum of a unimodal function on `[lo, hi]` by golden-section search.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi))
}

#[test]
fn time_block_matches_golden_section() {
    for seed in 0..5 {
        let us = users(seed, 1);
        let cfg = tight_config(&us);
        let layout = hd_partition(&GroupPartition::singletons(&[0]));
        let inst = Instance::with_broadcast(&us, &layout, &cfg, vec![true, false]);
        let (state, _) = initialize(&inst, &SolveSettings::default()).unwrap();
        let bp = build_t_subproblem(&inst, &state).unwrap();
        let ours = minimize_barrier(&bp.problem, &bp.x0, &BarrierSettings::default()).unwrap().value;

        // the budget binds at the optimum: t_1 = T - t_0
        let slot = cfg.slot_duration_s;
        let (q, d) = (&state.bs_powers, &state.offload_bits);
        let eval = |s: f64| evaluate_point(&us, &layout, &cfg, q, &[s, slot - s], d);
        let feasible = |s: f64| eval(s).1 >= 0.0;
        // bracket the feasible interval of t_0 around the start point
        let mid = state.phase_times[0];
        assert!(feasible(mid));
        let edge = |mut inside: f64, mut outside: f64| {
            for _ in 0..200 {
                let m = 0.5 * (inside + outside);
                if feasible(m) {
                    inside = m;
                } else {
                    outside = m;
                }
            }
            inside
        };
        let (lo, hi) = (edge(mid, 0.0), edge(mid, slot));
        let oracle = golden(|s| if feasible(s) { eval(s).0 } else { f64::INFINITY }, lo, hi);
        assert!(rel(ours, oracle) <= 1e-5, "seed {seed}: {ours} vs {oracle}");
    }
}

#[test]
fn offload_block_matches_two_dimensional_grid() {
    let mut checked = 0;
    for seed in 0..40 {
        let us = users(seed, 2);
        let cfg = tight_config(&us);
        let partition = GroupPartition::singletons(&sort_by_uplink(&us));
        let inst = Instance::new(&us, &partition, &cfg);
        let settings = SolveSettings::default();
        let Ok((state, _)) = initialize(&inst, &settings) else { continue };
        checked += 1;
        let start = inst.objective(&state).unwrap();
        let ours = start - block_resolve_gains(&inst, &state, &settings).unwrap()[2];

        let mut axes: Vec<Axis> = state.bs_powers.iter().chain(&state.phase_times).map(|&v| Axis::fixed(v)).collect();
        for u in &us {
            axes.push(Axis::span(u.min_offload_bits(cfg.slot_duration_s), u.task_bits, 401));
        }
        let grid = GridSpec { axes, feasibility_tol: 0.0 };
        let oracle = grid_minimize(&us, &partition, &cfg, &grid).unwrap();
        let best = oracle.best().expect("start point region is feasible").objective;
        assert!(rel(ours, best) <= 0.01, "seed {seed}: {ours} vs {best}");
    }
    assert!(checked >= 5, "only {checked} feasible draws");
}

#[test]
fn two_singleton_solve_is_near_the_conditional_grid_optimum() {
    // grid over (t, d) with the broadcast powers fixed at the BCD result
    let mut checked = 0;
    for seed in 0..40 {
        if checked == 4 {
            break;
        }
        let us = users(seed, 2);
        let cfg = tight_config(&us);
        let partition = GroupPartition::singletons(&sort_by_uplink(&us));
        let Ok(report) = solve(&us, &partition, &cfg, &SolveSettings::default()) else { continue };
        checked += 1;
        let slot = cfg.slot_duration_s;
        let a = &report.allocation;
        // symmetric spans keep the BCD point on the grid; the feasible set is thin
        // when harvesting binds
        let around = |v: f64, lo: f64, hi: f64| {
            let w = (0.25 * v).min(v - lo).min(hi - v);
            Axis::span(v - w, v + w, 21)
        };
        let mut axes: Vec<Axis> = a.bs_powers.iter().map(|&v| Axis::fixed(v)).collect();
        axes.extend(a.phase_times.iter().map(|&v| around(v, 0.0, slot)));
        for (u, &v) in us.iter().zip(&a.offload_bits) {
            axes.push(around(v, u.min_offload_bits(slot), u.task_bits));
        }
        let grid = GridSpec { axes, feasibility_tol: 1e-9 };
        let (outcome, _) = grid_minimize_zoom(&us, &partition, &cfg, &grid, 12, 0.5).unwrap();
        let best = outcome.best().unwrap().objective;
        assert!(rel(report.total_energy(), best) <= 0.01, "seed {seed}: {} vs {best}", report.total_energy());
    }
    assert_eq!(checked, 4);
}

#[test]
fn refining_never_raises_the_grid_best() {
    let us = users(3, 1);
    let cfg = tight_config(&us);
    let layout = hd_partition(&GroupPartition::singletons(&[0]));
    let slot = cfg.slot_duration_s;
    let grid = GridSpec {
        axes: vec![
            Axis::span(0.0, cfg.bs_max_power_w, 9),
            Axis::fixed(0.0),
            Axis::span(0.0, slot, 9),
            Axis::span(0.0, slot, 9),
            Axis::span(us[0].min_offload_bits(slot), us[0].task_bits, 9),
        ],
        feasibility_tol: 1e-12,
    };
    let mut previous = f64::INFINITY;
    let mut g = grid;
    for _ in 0..3 {
        let best = grid_minimize(&us, &layout, &cfg, &g).unwrap().best().map_or(f64::INFINITY, |b| b.objective);
        assert!(best <= previous);
        previous = best;
        g = g.refined();
    }
    assert!(previous.is_finite());
}

#[test]
fn single_phase_grid_has_no_feasible_point() {
    let us = users(1, 2);
    let cfg = SystemConfig::default();
    let partition = GroupPartition { groups: vec![sort_by_uplink(&us)] };
    let slot = cfg.slot_duration_s;
    let mut axes = vec![Axis::span(0.0, cfg.bs_max_power_w, 11), Axis::span(0.0, slot, 11)];
    for u in &us {
        axes.push(Axis::span(u.min_offload_bits(slot), u.task_bits, 11));
    }
    let outcome = grid_minimize(&us, &partition, &cfg, &GridSpec { axes, feasibility_tol: 0.0 }).unwrap();
    assert_eq!(outcome, GridOutcome::InfeasibleEverywhere);
}

#[test]
fn oversized_grids_are_rejected() {
    let us = users(1, 2);
    let cfg = SystemConfig::default();
    let partition = GroupPartition::singletons(&sort_by_uplink(&us));
    let axes = vec![Axis::span(0.0, 1.0, 100); 6];
    assert!(grid_minimize(&us, &partition, &cfg, &GridSpec { axes, feasibility_tol: 0.0 }).is_err());
}
