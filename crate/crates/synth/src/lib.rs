//! Procedural multi-traversal scenes rendered by ray casting, with exact
//! ground-truth material, light, normal, depth and static-mask layers.

pub mod generate;
pub mod shadow;
pub mod spec;
pub mod trace;

pub use generate::{generate_dataset, render_frame, sample_init_points, FrameLayers};
pub use spec::{standard_suites, suite, SyntheticSceneSpec, SUITE_NAMES};
pub use trace::analytic_shade;
