//! Compiles and runs every code block of the guide in `book/src`.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
mod corpus {}

#[doc = include_str!("../../../book/src/encoders.md")]
mod encoders {}

#[doc = include_str!("../../../book/src/segmentation.md")]
mod segmentation {}

#[doc = include_str!("../../../book/src/sif.md")]
mod sif {}

#[doc = include_str!("../../../book/src/clustering.md")]
mod clustering {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/tadam.md")]
mod tadam {}

#[doc = include_str!("../../../book/src/pipeline.md")]
mod pipeline {}

#[doc = include_str!("../../../README.md")]
mod readme {}
