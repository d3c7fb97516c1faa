//! The chapters of the guide in `book/src`, one module each, so that
//! `cargo test` runs every code block in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/waves.md")]
pub mod waves {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/windows.md")]
pub mod windows {}
#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/uncertainty.md")]
pub mod uncertainty {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
