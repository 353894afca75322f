//! Guide chapters compiled as doctests, so every listing in `book/` runs
//! under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/windows.md")]
pub mod windows {}
#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/loss.md")]
pub mod loss {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/attribution.md")]
pub mod attribution {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
