//! Runs every code block of the mdbook guide as a doctest.
//!
//! mdbook renders `book/src` but cannot execute the listings against the
//! library, so each chapter is also included here as a rustdoc page and
//! `cargo test --doc` compiles and runs every fence. The book cannot
//! drift from the crate without a test failing. One module per chapter
//! keeps a failure attributable to its source file.

#![forbid(unsafe_code)]

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}

#[doc = include_str!("../../../book/src/exact-moments.md")]
pub mod exact_moments {}

#[doc = include_str!("../../../book/src/limits.md")]
pub mod limits {}

#[doc = include_str!("../../../book/src/count-covariance.md")]
pub mod count_covariance {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/audit.md")]
pub mod audit {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
