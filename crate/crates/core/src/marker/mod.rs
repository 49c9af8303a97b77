//! Square binary fiducial detection: thresholding, quad extraction, bit
//! decoding, dictionary lookup and pose output.

pub mod contour;
pub mod detect;
pub mod dictionary;
pub mod threshold;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use contour::{find_quad_candidates, QuadParams};
pub use detect::{
    canonicalize, decode_bits, detect_markers, refine_corners, DecodedBits, DepthMap,
    DetectorConfig, MarkerDetector, MarkerObservation,
};
pub use dictionary::{match_dictionary, BitMatrix, DictionaryMatch, MarkerDictionary};
pub use threshold::{binarize_adaptive, histogram, otsu_level_from_histogram, otsu_threshold, AdaptiveParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkerError {
    #[error("invalid dictionary: {0}")]
    Dictionary(String),
    #[error("bit matrix is {found}x{found}, dictionary expects {expected}x{expected}")]
    GridMismatch { expected: usize, found: usize },
    #[error("no dictionary code within the correction bound")]
    NoMatch,
    #[error("histogram has fewer than two occupied levels")]
    DegenerateHistogram,
    #[error("marker border is not black")]
    BorderInvalid,
    #[error("canonical size {n} is below the minimum {min}")]
    CanonicalTooSmall { n: usize, min: usize },
    #[error("canonical size {n} does not split into {cells} cells")]
    CanonicalNotDivisible { n: usize, cells: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
