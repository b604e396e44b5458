//! Guide chapters compiled as doc-tests, so the listings in `book/` keep
//! building against the current API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/weighting.md")]
pub mod weighting {}

#[doc = include_str!("../../../book/src/periodicity.md")]
pub mod periodicity {}

#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod benchmark {}
