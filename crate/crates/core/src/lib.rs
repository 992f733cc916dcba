//! Multi-time-scale stochastic approximation with averaged operator
//! estimates.
//!
//! The crate solves nested systems of `N` coupled equations `F̄_i(θ) = 0`
//! where only noisy samples `F_i(θ, X)` are available and `X` follows a
//! Markov chain that may depend on `θ`. Two solvers are provided: the
//! accelerated scheme, which tracks a running average `f_i` of each operator
//! and steps along it, and the classic scheme, which steps along the raw
//! samples with level-specific polynomial step sizes.
//!
//! ```
//! use amsa::prelude::*;
//!
//! let system = make_nested_linear(2, &[2, 2], 0.5, 0.1, 0.2, KernelKind::Fixed, 1).unwrap();
//! let schedule = StepSchedule::practical_amsa(2, 0.5, 1000.0, 2.0, 2.0).unwrap();
//! let traj = run(
//!     &system,
//!     &schedule,
//!     SolverKind::Amsa,
//!     2_000,
//!     0,
//!     &InitialPoint::zeros(system.dims()).unwrap(),
//!     &RecordPlan::LogSpaced { per_decade: 10, cap: 64 },
//!     &RunOptions::default(),
//! )
//! .unwrap();
//! assert!(traj.diverged.is_none());
//! ```

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod problems;
pub mod samplers;
pub mod schedules;
pub mod solvers;
pub mod stack;
pub mod systems;

pub use error::{Error, Result};

/// The commonly used items.
pub mod prelude {
    pub use crate::diagnostics::{
        annotate_trajectory, check_lemma_bound_x, check_lemma_lipschitz, estimate_lipschitz_bounds,
        estimate_nested_delta, residuals, solve_nested_targets, verify_target_identity, DiagnosticsRecord,
        TargetMode,
    };
    pub use crate::error::{Error, Result};
    pub use crate::problems::{
        make_nested_linear, make_random_mfg, mfg_metrics, mfg_operator_system, softmax_policy, KernelKind,
        MfgSpec, NestedLinearSpec,
    };
    pub use crate::samplers::{
        fit_ergodicity, mixing_time, stationary_distribution, tv_distance, validate_kernel_lipschitz,
        FiniteKernel,
    };
    pub use crate::schedules::{
        check_amsa_conditions, optimal_msa_exponents, predict_amsa_rate, predict_msa_rate, SolverKind,
        StepSchedule,
    };
    pub use crate::solvers::{amsa_step, msa_step, run, InitialPoint, RecordPlan, RunOptions, SolverState, Trajectory};
    pub use crate::stack::ParameterStack;
    pub use crate::systems::{evaluate_mean_operator, evaluate_operator, Operator, OperatorSystem};
}
