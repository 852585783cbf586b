//! Synthetic GUI action videos, cursor-grounded visual prompts, keyframe
//! selection, caption queries and element-wise IoU scoring.
//!
//! The guide under `book/` walks through each stage; its code blocks are
//! compiled and run as doctests.

pub mod caption;
pub mod cursor_ground;
pub mod datasets;
pub mod frame;
pub mod geometry;
pub mod http;
pub mod keyframe;
pub mod metric;
pub mod pipeline;
pub mod prompting;
pub mod scene_sim;
pub mod sprite;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/grounding.md")]
    mod grounding {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/keyframes.md")]
    mod keyframes {}
    #[doc = include_str!("../../../book/src/captioning.md")]
    mod captioning {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
