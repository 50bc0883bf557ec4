use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (camera-frame depth {0})")]
    NonPositiveDepth(f64),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("frame list has {frames} entries but mask list has {masks}")]
    LengthMismatch { frames: usize, masks: usize },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed svg: {0}")]
    MalformedSvg(String),
    #[error("malformed pose file: {0}")]
    MalformedPoses(String),
    #[error("malformed feature-track file: {0}")]
    MalformedFeatures(String),
    #[error("rotation for frame {frame} is not orthonormal (deviation {deviation:e})")]
    NonOrthonormalRotation { frame: usize, deviation: f64 },
    #[error("pose file has {found} records, expected {expected}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("image error: {0}")]
    Image(String),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("point ({0}, {1}) lies outside the image")]
    PointOutOfBounds(f64, f64),
    #[error("invalid flow configuration: {0}")]
    InvalidFlowConfig(String),

    #[error("cost matrix contains a non-finite or negative entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("degenerate triangulation geometry: {0}")]
    DegenerateGeometry(String),
    #[error("reprojection error {error:.3} px exceeds threshold {threshold:.3} px")]
    HighReprojectionError { error: f64, threshold: f64 },
    #[error("no localized fruit available for size normalization")]
    NoLocalizedFruit,

    #[error("invalid scene configuration: {0}")]
    ConfigInvalid(String),
    #[error("point ({0}, {1}) in frame {2} is not on a fruit visible in consecutive frames")]
    PointNotOnFruit(f64, f64, usize),

    #[error("segment {0} missing from one of the count maps")]
    MissingSegment(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O failure on {}: {source}", .path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
