//! Three-stage corn kernel grading with convolutional vision transformers.
//!
//! The guide under `book/` walks through each module; its Rust snippets run
//! as doc-tests.

pub mod backbone;
pub mod cascade;
pub mod config;
pub mod data;
pub mod labels;
pub mod metrics;
pub mod service;
pub mod tensor;
pub mod training;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/backbone.md")]
    struct Backbone;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/cascade.md")]
    struct Cascade;
    #[doc = include_str!("../../../book/src/service.md")]
    struct Service;
}
