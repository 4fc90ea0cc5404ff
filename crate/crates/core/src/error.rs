use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the heat-map pipeline.
#[derive(Debug, Error)]
pub enum HmbError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("point ({x}, {y}) at frame {frame} lies outside the {width}x{height} scene")]
    OutOfBounds {
        frame: i64,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("frames must be strictly increasing (frame {next} follows {prev})")]
    NonMonotoneFrames { prev: i64, next: i64 },
    #[error("nonpositive decay coefficient")]
    NonPositiveDecay,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no heat sources")]
    NoHeatSources,
    #[error("t_cur precedes trajectory end")]
    TCurPrecedesEnd,
    #[error("degenerate heat map")]
    DegenerateHeatMap,
    #[error("no half-height contour")]
    NoHalfHeightContour,
    #[error("zero spread")]
    ZeroSpread,
    #[error("non-invertible alignment")]
    NonInvertibleAlignment,
    #[error("grid mismatch")]
    GridMismatch,
    #[error("unclassifiable: {0}")]
    Unclassifiable(Box<HmbError>),
    #[error("invalid kernel configuration: {0}")]
    InvalidKernel(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no predictions")]
    NoPredictions,
    #[error("insufficient samples for label {0:?}")]
    InsufficientSamples(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("empty training split")]
    EmptyTrainSplit,
    #[error("window larger than clip ({window} > {span} frames)")]
    WindowTooLarge { window: u32, span: u32 },
    #[error("template infeasible: {0}")]
    InfeasibleTemplate(String),
    #[error("no records")]
    NoRecords,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("unsupported model version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HmbError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HmbError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HmbError>;
