//! The guide's chapters double as doc-tests: every fenced Rust block in
//! `src/*.md` compiles and runs under `cargo test --doc -p vflsim-book`,
//! so the book cannot drift from the library.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/networks.md")]
pub mod networks {}
#[doc = include_str!("src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("src/attack.md")]
pub mod attack {}
#[doc = include_str!("src/defenses.md")]
pub mod defenses {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
