use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("value exceeds bit depth: sample {value} > {max}")]
    ValueExceedsBitDepth { value: f64, max: f64 },
    #[error("missing sidecar metadata file {0}")]
    MissingSidecar(PathBuf),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("degenerate illuminant")]
    DegenerateIlluminant,
    #[error("degenerate correspondence")]
    DegenerateCorrespondence,
    #[error("invalid chart geometry: {0}")]
    InvalidChart(String),
    #[error("malformed chart file: {0}")]
    MalformedChartFile(String),
    #[error("sample square exceeds image bounds")]
    SampleOutOfBounds,
    #[error("empty sample list")]
    EmptySamples,
    #[error("no valid achromatic patch")]
    NoValidAchromaticPatch,
    #[error("degenerate ground truth")]
    DegenerateGroundTruth,
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("duplicate image_id {0}")]
    DuplicateImageId(String),
    #[error("invalid estimator spec: {0}")]
    InvalidEstimatorSpec(String),
    #[error("unknown estimator {0:?}")]
    UnknownEstimator(String),
    #[error("estimator {0:?} is already registered")]
    DuplicateEstimator(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("degenerate zero estimate")]
    DegenerateEstimate,
    #[error("zero vector input")]
    ZeroVector,
    #[error("division by zero channel")]
    ZeroChannel,
    #[error("empty error list")]
    EmptyErrors,
    #[error("nothing to rank")]
    EmptyRanking,
    #[error("empty intersection between ground-truth sets")]
    EmptyIntersection,
    #[error("zero-sum vector has no chromaticity")]
    ZeroSum,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::MalformedCsv(e.to_string())
    }
}
