//! Compiles the listings of the guide in `book/src` as doc-tests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/combining.md")]
pub mod combining {}

#[doc = include_str!("../../../book/src/resampling.md")]
pub mod resampling {}

#[doc = include_str!("../../../book/src/schedule.md")]
pub mod schedule {}

#[doc = include_str!("../../../book/src/recognizer.md")]
pub mod recognizer {}

#[doc = include_str!("../../../book/src/topics.md")]
pub mod topics {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
