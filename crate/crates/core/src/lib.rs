//! Multi-alpha probability-map labels and post-processing for
//! arbitrary-shape text segmentation.
//!
//! A text instance is labelled by mapping each interior pixel's distance to
//! the instance boundary through a sigmoid of steepness `alpha`, once per
//! alpha in a schedule. Small alphas give nearly linear ramps that separate
//! touching instances; large alphas approach the binary mask. At inference
//! the stack is thresholded, seeds from the most shrunken map are grown
//! through the fuller maps, weak candidates are filtered, and boundaries are
//! traced.
//!
//! ```
//! use pmtext::{make_schedule, generate_label_stack, Grid, TextPolygon64};
//! use pmtext::{postprocess, PipelineConfig};
//!
//! let grid = Grid::new(64, 48).unwrap();
//! let word = TextPolygon64::from_xy(&[(6.0, 8.0), (58.0, 8.0), (58.0, 30.0), (6.0, 30.0)]).unwrap();
//! let schedule = make_schedule::<f64>(3, 4).unwrap();
//! let stack = generate_label_stack(&[word], grid, &schedule);
//! let out = postprocess(&stack, &schedule, &PipelineConfig::default()).unwrap();
//! assert_eq!(out.boundaries.len(), 1);
//! ```

pub mod bench;
pub mod config;
pub mod contours;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod pipeline;
pub mod probmap;
pub mod reconstruct;
pub mod scalar;
pub mod synth;

pub use config::PipelineConfig;
pub use contours::{extract_boundary, min_area_rect, trace_polygon, BoundaryMode, DetectionBoundary};
pub use error::{Error, Result};
pub use evaluation::{match_and_score, polygon_iou, Detection, MatchReport};
pub use filtering::{threshold_filter, voting_filter, FilterConfig, FilterMode};
pub use geometry::{Grid, Point, TextPolygon};
pub use mask::InstanceMask;
pub use pipeline::{postprocess, Postprocessed};
pub use probmap::{
    bf, generate_label_stack, lf, make_schedule, ohem_select, saf, stack_loss, AlphaSchedule, LossConfig,
    ProbabilityMap, ProbabilityStack,
};
pub use reconstruct::{binarize_stack, progressive_scale_expansion, reconstruct, watershed_aggregate, GrowthAlgorithm};
pub use scalar::Scalar;
pub use synth::{corrupt, oracle_stack, random_scene, NoiseSpec, SceneSpec, ShapeFamily};

pub type Point64 = Point<f64>;
pub type Point32 = Point<f32>;
pub type TextPolygon64 = TextPolygon<f64>;
pub type TextPolygon32 = TextPolygon<f32>;
pub type ProbabilityMap64 = ProbabilityMap<f64>;
pub type ProbabilityMap32 = ProbabilityMap<f32>;
pub type ProbabilityStack64 = ProbabilityStack<f64>;
pub type ProbabilityStack32 = ProbabilityStack<f32>;
pub type AlphaSchedule64 = AlphaSchedule<f64>;
pub type AlphaSchedule32 = AlphaSchedule<f32>;
pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
