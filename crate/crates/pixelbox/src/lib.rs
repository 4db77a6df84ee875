//! Pixel-wise bounding-box regression with an IoU loss layer.
//!
//! Every pixel inside an object predicts a 4-distance box
//! ([`geometry::DistanceBox`]) to the object's bounds. The
//! [`loss`] module provides the differentiable `-ln(IoU)` loss that
//! regresses the four bounds jointly, alongside an L2 baseline that
//! treats them independently. A small fully convolutional two-branch
//! network ([`nn`]) predicts a confidence heatmap and a box heatmap at
//! full image resolution; [`synth`] generates deterministic training
//! scenes, [`postprocess`] turns heatmaps into detections, and
//! [`eval`] measures convergence and scale robustness. Analytic
//! gradients throughout are validated by the finite-difference oracle
//! in [`gradcheck`].
//!
//! The `pixelbox` binary exposes the experiment harness; the book
//! under `book/` walks through the concepts with runnable snippets.

pub mod commands;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod postprocess;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod train;

// The book's code snippets double as doc-tests so they cannot rot.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(index, "../book/src/index.md");
    chapter!(box_geometry, "../book/src/box-geometry.md");
    chapter!(iou_loss, "../book/src/iou-loss.md");
    chapter!(gradient_checking, "../book/src/gradient-checking.md");
    chapter!(network, "../book/src/network.md");
    chapter!(synthetic_scenes, "../book/src/synthetic-scenes.md");
    chapter!(postprocessing, "../book/src/postprocessing.md");
    chapter!(experiments, "../book/src/experiments.md");
    chapter!(file_formats, "../book/src/file-formats.md");
}
