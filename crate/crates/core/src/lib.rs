//! Source-to-source compiler for affine stencil loop nests targeting
//! high-level synthesis: tiling, cache-buffer planning, burst-aligned data
//! shipments, HLS-C emission, and a reference interpreter for checking the
//! result.

pub mod frontend;
pub mod scop;
pub mod planner;
pub mod tiler;
pub mod ir;
pub mod shipgen;
pub mod vm;
pub mod pipeline;
pub mod emit;
