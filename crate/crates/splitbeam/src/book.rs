//! Guide chapters included as doc-tests so every code block in the book
//! compiles and runs against the current API. `cargo test --doc` is the
//! book's CI.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/channel-model.md")]
pub mod channel_model {}

#[doc = include_str!("../../../book/src/link-kernel.md")]
pub mod link_kernel {}

#[doc = include_str!("../../../book/src/optimization.md")]
pub mod optimization {}

#[doc = include_str!("../../../book/src/degeneration.md")]
pub mod degeneration {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
