//! End-to-end simulation checks through the public API: exact draining,
//! bitwise determinism, event-driven vs fixed-step agreement, realized
//! traffic loads, environment occupancy, and run bookkeeping.

use conesched::analysis::{flow_balance_check, FLOW_BALANCE_TOLERANCE};
use conesched::model::{
    EnvTraceKind, EnvironmentSpec, EnvironmentTrace, ScheduleMatrix, ServiceVector, SystemSpec,
    TrafficKind, TrafficTrace,
};
use conesched::repro::{balanced_system, drain_fixture};
use conesched::sim::{simulate, simulate_fixed_step, SimOptions, Trajectory};

fn fluid(load: &[f64]) -> TrafficTrace {
    TrafficTrace {
        kind: TrafficKind::Fluid,
        load: load.to_vec(),
    }
}

fn periodic(spec: &SystemSpec, cycle: f64) -> EnvironmentTrace {
    EnvironmentTrace {
        kind: EnvTraceKind::Periodic { cycle_length: cycle },
        pi: spec.pi().to_vec(),
    }
}

fn with_initial(x0: &[f64]) -> SimOptions {
    SimOptions {
        initial_workload: Some(x0.to_vec()),
        ..SimOptions::default()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn deterministic_drain_is_exact() {
    // From (2,1) with unit service and identity bias: serve queue 1 alone
    // until the scores tie at t=1, slide down the diagonal until both hit
    // zero at t=3, then hold the origin.
    let (spec, matrix) = drain_fixture();
    let traj = simulate(
        &spec,
        &matrix,
        &fluid(&[0.0, 0.0]),
        &periodic(&spec, 10.0),
        4.0,
        0,
        &with_initial(&[2.0, 1.0]),
    )
    .unwrap();

    assert!(max_abs_diff(&traj.x_at(1.0), &[1.0, 1.0]) <= 1e-12);
    assert!(max_abs_diff(&traj.x_at(2.0), &[0.5, 0.5]) <= 1e-12);
    assert_eq!(traj.x_at(3.0), vec![0.0, 0.0], "empty hit must be exact");
    assert_eq!(traj.final_x(), &[0.0, 0.0]);
    assert_eq!(traj.total_service(), &[2.0, 1.0]);
    assert!(flow_balance_check(&traj).ok);
}

fn stochastic_case() -> (SystemSpec, ScheduleMatrix, TrafficTrace, EnvironmentTrace) {
    let spec = balanced_system();
    let matrix = ScheduleMatrix::new(vec![vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
    let traffic = TrafficTrace {
        kind: TrafficKind::Stochastic {
            mean_job: vec![1.0, 1.0],
            window: 20.0,
            burst: 2.0,
        },
        load: vec![0.5, 0.4],
    };
    let envtrace = EnvironmentTrace {
        kind: EnvTraceKind::RandomHolding { mean_cycle: 10.0 },
        pi: spec.pi().to_vec(),
    };
    (spec, matrix, traffic, envtrace)
}

fn assert_bitwise_equal(a: &Trajectory, b: &Trajectory) {
    assert_eq!(a.times(), b.times());
    assert_eq!(a.final_x(), b.final_x());
    assert_eq!(a.total_arrival(), b.total_arrival());
    assert_eq!(a.total_service(), b.total_service());
    assert_eq!(a.event_counts, b.event_counts);
    for i in 0..a.len() {
        assert_eq!(a.x(i), b.x(i));
        assert_eq!(a.env(i), b.env(i));
        assert_eq!(a.service(i), b.service(i));
    }
}

#[test]
fn equal_seeds_reproduce_bitwise() {
    let (spec, matrix, traffic, envtrace) = stochastic_case();
    let opts = SimOptions::default();
    let run = || simulate(&spec, &matrix, &traffic, &envtrace, 5e3, 77, &opts).unwrap();
    let a = run();
    let b = run();
    assert_bitwise_equal(&a, &b);
}

#[test]
fn different_seeds_diverge() {
    let (spec, matrix, traffic, envtrace) = stochastic_case();
    let opts = SimOptions::default();
    let a = simulate(&spec, &matrix, &traffic, &envtrace, 5e3, 77, &opts).unwrap();
    let b = simulate(&spec, &matrix, &traffic, &envtrace, 5e3, 78, &opts).unwrap();
    assert_ne!(
        (a.final_x(), a.event_counts.job_jump),
        (b.final_x(), b.event_counts.job_jump),
        "different seeds should change the run"
    );
}

#[test]
fn fixed_step_converges_to_the_event_engine() {
    let (spec, matrix) = drain_fixture();
    let traffic = fluid(&[0.0, 0.0]);
    let envtrace = periodic(&spec, 10.0);
    let opts = with_initial(&[2.0, 1.0]);
    let exact = simulate(&spec, &matrix, &traffic, &envtrace, 4.0, 0, &opts).unwrap();

    let mut last_gap = f64::INFINITY;
    for dt in [1e-1, 1e-2, 1e-3] {
        let approx =
            simulate_fixed_step(&spec, &matrix, &traffic, &envtrace, 4.0, 0, dt, &opts).unwrap();
        let mut gap = 0.0_f64;
        for k in 0..=400 {
            let t = 4.0 * k as f64 / 400.0;
            gap = gap.max(max_abs_diff(&exact.x_at(t), &approx.x_at(t)));
        }
        assert!(gap <= 0.35 * last_gap, "dt {dt}: gap {gap} vs previous {last_gap}");
        assert!(flow_balance_check(&approx).ok);
        last_gap = gap;
    }
}

#[test]
fn realized_loads_match_the_nominal_load() {
    let spec = balanced_system();
    let matrix = ScheduleMatrix::identity(2);
    let envtrace = EnvironmentTrace {
        kind: EnvTraceKind::Periodic { cycle_length: 10.0 },
        pi: spec.pi().to_vec(),
    };
    let load = vec![0.4, 0.3];
    let horizon = 1e4;
    let kinds = [
        ("fluid", TrafficKind::Fluid),
        (
            "jobs",
            TrafficKind::Jobs {
                sigma: vec![1.0, 1.0],
            },
        ),
        (
            "stochastic",
            TrafficKind::Stochastic {
                mean_job: vec![1.0, 1.0],
                window: 20.0,
                burst: 2.0,
            },
        ),
        (
            "adversarial-env",
            TrafficKind::AdversarialEnv {
                target_env: 0,
                window: 20.0,
                burst: 2.0,
            },
        ),
        (
            "adversarial-schedule",
            TrafficKind::AdversarialSchedule {
                window: 20.0,
                burst: 2.0,
                info_lag: 5.0,
            },
        ),
    ];
    for (name, kind) in kinds {
        let traffic = TrafficTrace {
            kind,
            load: load.clone(),
        };
        let traj = simulate(
            &spec,
            &matrix,
            &traffic,
            &envtrace,
            horizon,
            11,
            &SimOptions::default(),
        )
        .unwrap();
        for q in 0..2 {
            let realized = traj.total_arrival()[q] / horizon;
            assert!(
                (realized - load[q]).abs() <= 0.01,
                "{name}: queue {q} realized {realized} vs nominal {}",
                load[q]
            );
        }
        assert!(flow_balance_check(&traj).ok, "{name}: flow balance");
    }
}

#[test]
fn occupancy_tracks_the_proportions() {
    let spec = SystemSpec::new(
        2,
        vec![
            EnvironmentSpec::new(1, vec![ServiceVector::new(vec![1.0, 0.0]).unwrap()]),
            EnvironmentSpec::new(2, vec![ServiceVector::new(vec![0.0, 1.0]).unwrap()]),
        ],
        vec![0.3, 0.7],
    )
    .unwrap()
    .completed(64)
    .unwrap();
    let matrix = ScheduleMatrix::identity(2);
    let traffic = fluid(&[0.1, 0.1]);
    let horizon = 1e5;

    // Periodic: exact up to one cycle of rounding.
    let traj = simulate(
        &spec,
        &matrix,
        &traffic,
        &periodic(&spec, 10.0),
        horizon,
        0,
        &SimOptions::default(),
    )
    .unwrap();
    let occ: Vec<f64> = traj.occupancy().iter().map(|o| o / horizon).collect();
    assert!((occ[0] - 0.3).abs() <= 1e-3, "periodic occupancy {occ:?}");
    assert!((occ[1] - 0.7).abs() <= 1e-3);

    let traj = simulate(
        &spec,
        &matrix,
        &traffic,
        &EnvironmentTrace {
            kind: EnvTraceKind::RandomHolding { mean_cycle: 10.0 },
            pi: spec.pi().to_vec(),
        },
        horizon,
        3,
        &SimOptions::default(),
    )
    .unwrap();
    let occ: Vec<f64> = traj.occupancy().iter().map(|o| o / horizon).collect();
    assert!((occ[0] - 0.3).abs() <= 0.05, "random-holding occupancy {occ:?}");
    assert!((occ[1] - 0.7).abs() <= 0.05);
}

#[test]
fn stride_marks_appear_in_the_sample_times() {
    let (spec, matrix) = drain_fixture();
    let opts = SimOptions {
        initial_workload: Some(vec![2.0, 1.0]),
        sample_stride: Some(0.5),
        ..SimOptions::default()
    };
    let traj = simulate(
        &spec,
        &matrix,
        &fluid(&[0.05, 0.05]),
        &periodic(&spec, 10.0),
        4.0,
        0,
        &opts,
    )
    .unwrap();
    for k in 0..=8 {
        let mark = 0.5 * k as f64;
        assert!(
            traj.times().iter().any(|&t| t == mark),
            "missing stride mark {mark} in {:?}",
            traj.times()
        );
    }
    assert_eq!(traj.initial_x(), &[2.0, 1.0]);
    assert_eq!(traj.x(0), &[2.0, 1.0]);
}

#[test]
fn flow_balance_residuals_stay_machine_small() {
    let (spec, matrix, traffic, envtrace) = stochastic_case();
    for seed in 0..8 {
        let traj = simulate(
            &spec,
            &matrix,
            &traffic,
            &envtrace,
            2e3,
            seed,
            &SimOptions::default(),
        )
        .unwrap();
        let report = flow_balance_check(&traj);
        assert!(report.ok);
        for r in &report.residuals {
            assert!(r.abs() <= FLOW_BALANCE_TOLERANCE * (1.0 + traj.total_arrival()[0].abs()));
        }
    }
}

#[test]
fn lag_runs_stay_bounded_and_balanced() {
    // A lagged controller on the balanced system: chatter is expected, the
    // budget is not allowed to blow up with the horizon, and the books must
    // still balance exactly.
    let spec = balanced_system();
    let matrix = ScheduleMatrix::identity(2);
    let traffic = fluid(&[0.675, 0.675]);
    let envtrace = periodic(&spec, 10.0);
    let opts = SimOptions {
        info_lag: 10.0,
        ..SimOptions::default()
    };
    let short = simulate(&spec, &matrix, &traffic, &envtrace, 2e3, 0x1A6, &opts).unwrap();
    let long = simulate(&spec, &matrix, &traffic, &envtrace, 2e4, 0x1A6, &opts).unwrap();
    assert!(flow_balance_check(&short).ok);
    assert!(flow_balance_check(&long).ok);
    let short_rate = short.event_counts.total() as f64 / 2e3;
    let long_rate = long.event_counts.total() as f64 / 2e4;
    assert!(
        long_rate <= 3.0 * short_rate + 1.0,
        "event rate grew with the horizon: {short_rate}/t then {long_rate}/t"
    );
    assert!(long.final_x().iter().all(|&x| x <= 50.0));
}
