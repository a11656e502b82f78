//! Compiles the book chapters as doc-tests, so `cargo test` runs every
//! snippet in `book/src` (and the README) against the current library.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/bands.md")]
pub mod bands {}

#[doc = include_str!("../../../book/src/optics.md")]
pub mod optics {}

#[doc = include_str!("../../../book/src/emission.md")]
pub mod emission {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
