//! The book's code listings, compiled and run by `cargo test --doc`.
//!
//! mdbook cannot test listings against a workspace crate, so every chapter
//! is included here as the documentation of its own module. A failing
//! doctest names the module, and the module names the chapter. The README
//! quick start is included the same way.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/nested-systems.md")]
pub mod nested_systems {}
#[doc = include_str!("../../../book/src/step-sizes.md")]
pub mod step_sizes {}
#[doc = include_str!("../../../book/src/solvers.md")]
pub mod solvers {}
#[doc = include_str!("../../../book/src/markov-noise.md")]
pub mod markov_noise {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/mean-field-games.md")]
pub mod mean_field_games {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
