//! Doctest harness for the guide: each chapter of `book/src` is a module
//! here, so `cargo test -p rmtq-book` runs its code blocks.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/states.md")]
pub mod states {}

#[doc = include_str!("../../../book/src/quantifiers.md")]
pub mod quantifiers {}

#[doc = include_str!("../../../book/src/density-of-states.md")]
pub mod density_of_states {}

#[doc = include_str!("../../../book/src/bvh-channel.md")]
pub mod bvh_channel {}

#[doc = include_str!("../../../book/src/resolvent.md")]
pub mod resolvent {}

#[doc = include_str!("../../../book/src/finite-n-oracle.md")]
pub mod finite_n_oracle {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
