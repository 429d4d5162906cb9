//! The guide's chapters, compiled so their code listings run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/mixtures.md")]
pub mod mixtures {}
#[doc = include_str!("../../../book/src/splice.md")]
pub mod splice {}
#[doc = include_str!("../../../book/src/msplice.md")]
pub mod msplice {}
#[doc = include_str!("../../../book/src/nonstereo.md")]
pub mod nonstereo {}
#[doc = include_str!("../../../book/src/adaptation.md")]
pub mod adaptation {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
