//! Benchmark problem generators.

pub mod mfg;
pub mod nested_linear;

pub use mfg::{make_random_mfg, mfg_metrics, mfg_operator_system, softmax_policy, MfgSpec, MfgSystem};
pub use nested_linear::{make_nested_linear, KernelKind, NestedLinearSpec};
