use amsa::diagnostics::{residuals, TARGET_TOL};
use amsa::prelude::*;
use amsa::samplers::FiniteKernel;
use amsa::systems::ZeroSystem;

fn benchmark() -> OperatorSystem {
    make_nested_linear(2, &[3, 3], 0.5, 0.1, 0.5, KernelKind::Fixed, 0).unwrap()
}

#[test]
fn zero_operator_is_a_fixed_point() {
    let kernel = FiniteKernel::fixed(vec![vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
    let sys = ZeroSystem::new(vec![2, 1], kernel).unwrap();
    let theta0 = ParameterStack::from_blocks(vec![vec![1.0, -2.0], vec![3.0]]).unwrap();
    let schedule = StepSchedule::amsa(10.0, 4.0, vec![1.0, 2.0]).unwrap();
    let traj = run(
        &sys,
        &schedule,
        SolverKind::Amsa,
        500,
        9,
        &InitialPoint::from_theta(theta0.clone()),
        &RecordPlan::Dense,
        &RunOptions::default(),
    )
    .unwrap();
    for r in &traj.records {
        assert_eq!(r.theta, theta0);
        assert!(r.f.as_slice().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn same_seed_same_path() {
    let sys = benchmark();
    let schedule = StepSchedule::practical_amsa(2, 0.5, 1000.0, 2.0, 2.0).unwrap();
    let go = |seed| {
        run(
            &sys,
            &schedule,
            SolverKind::Amsa,
            2000,
            seed,
            &InitialPoint::zeros(sys.dims()).unwrap(),
            &RecordPlan::LogSpaced { per_decade: 10, cap: 64 },
            &RunOptions::default(),
        )
        .unwrap()
    };
    assert_eq!(go(4), go(4));
    assert_ne!(go(4).terminal().theta, go(5).terminal().theta);
}

#[test]
fn both_solvers_approach_the_solution() {
    let sys = benchmark();
    let init = InitialPoint::zeros(sys.dims()).unwrap();
    let start = residuals(&sys, 0, &init.theta0, &init.theta0, SolverKind::Msa, TARGET_TOL).unwrap().v;
    let cases = [
        (SolverKind::Amsa, StepSchedule::practical_amsa(2, 0.5, 1000.0, 2.0, 2.0).unwrap()),
        (SolverKind::Msa, StepSchedule::practical_msa(0.5, 1000.0, &[10.0]).unwrap()),
    ];
    for (kind, schedule) in cases {
        let traj = run(&sys, &schedule, kind, 50_000, 1, &init, &RecordPlan::None, &RunOptions::default()).unwrap();
        let end = traj.terminal();
        let v = residuals(&sys, end.t, &end.theta, &end.f, SolverKind::Msa, TARGET_TOL).unwrap().v;
        assert!(v < 0.05 * start, "{kind:?}: {v} vs {start}");
    }
}

#[test]
fn first_step_reads_the_initial_estimate() {
    // λ_t = 1/(t+1): f becomes the running mean of the samples, which are
    // all zero here, while θ moves once along the initial estimate.
    let kernel = FiniteKernel::fixed(vec![vec![1.0]]).unwrap();
    let sys = ZeroSystem::new(vec![1], kernel).unwrap();
    let schedule = StepSchedule::amsa(0.0, 1.0, vec![0.1]).unwrap();
    let mut init = InitialPoint::zeros(&[1]).unwrap();
    init.f0 = Some(ParameterStack::from_blocks(vec![vec![8.0]]).unwrap());
    let traj = run(&sys, &schedule, SolverKind::Amsa, 3, 0, &init, &RecordPlan::Dense, &RunOptions::default()).unwrap();
    assert_eq!(traj.records[1].f.block(0), &[0.0]);
    // θ_1 = θ_0 - α_0 f_0 = -0.1 · 8.
    assert!((traj.records[1].theta.block(0)[0] + 0.8).abs() < 1e-15);
}
