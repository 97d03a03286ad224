//! The guide in `book/`, compiled as doc comments so `cargo test` runs every
//! snippet. mdbook cannot link external crates into its own tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/first-run.md")]
pub mod first_run {}
#[doc = include_str!("../../../book/src/criteria.md")]
pub mod criteria {}
#[doc = include_str!("../../../book/src/hashing.md")]
pub mod hashing {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/counterexample.md")]
pub mod counterexample {}
