//! The long-form guide, one module per chapter.
//!
//! Chapter sources live in `book/` (an mdbook) and are included here so
//! that every code snippet in the book compiles and runs under
//! `cargo test --doc`; the book cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/windows-and-labels.md")]
pub mod windows_and_labels {}

#[doc = include_str!("../../../book/src/frontend.md")]
pub mod frontend {}

#[doc = include_str!("../../../book/src/classifier.md")]
pub mod classifier {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
