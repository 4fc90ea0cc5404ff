//! Group activity recognition with heat-map surfaces.
//!
//! Trajectories become temporally decayed heat sources on a patch grid,
//! which are diffused into a heat-map surface. Surfaces are aligned by their
//! peak key points and classified by (adaptive) surface fitting against
//! per-activity standard surfaces or individual training surfaces.

// negated float comparisons are deliberate, they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod io;
pub mod model_io;
pub mod params;
pub mod pipeline;
pub mod recognition;
pub mod synth;
pub mod training;

pub use alignment::{align, key_points, AlignTransform, Alignment, KeyPointSet, Point};
pub use diffusion::{diffuse, diffuse_naive, HeatMap};
pub use error::{HmbError, Result};
pub use evaluation::{compute_metrics, inject_noise, run_split_eval, sweep_params, EvalConfig, EvalReport, NoiseSpec};
pub use grid::{
    accumulated_energy, build_heat_source_field, extract_dwell_intervals, DwellInterval, GridSpec, HeatSourceField,
    TrackPoint, Trajectory,
};
pub use io::MotionGridSequence;
pub use model_io::{load_model, save_model};
pub use params::{AlignConfig, Coefficient, FitMode, HeatParams, SurfaceNorm};
pub use pipeline::{heat_map_from_trajectories, Clip, Dataset, LabeledClip};
pub use recognition::{
    classify_asf, classify_sf, classify_sliding, label_runs, majority_smooth, Classification, KernelConfig, StreamInput,
    WindowLabel,
};
pub use training::{train, ActivityModel, TrainConfig, TrainingSet};
