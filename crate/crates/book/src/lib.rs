//! Guide chapters, compiled so their examples run as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/constellations.md")]
pub mod constellations {}
#[doc = include_str!("../../../book/src/scheme.md")]
pub mod scheme {}
#[doc = include_str!("../../../book/src/rates.md")]
pub mod rates {}
#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
#[doc = include_str!("../../../book/src/design.md")]
pub mod design {}
#[doc = include_str!("../../../book/src/link.md")]
pub mod link {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
