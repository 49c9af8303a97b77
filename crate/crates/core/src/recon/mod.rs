//! Volume reconstruction from ordered, tracked frames.

mod interp;
mod pipeline;
mod volume;

pub use interp::{interpolate_slices, slice_count, to_nm, PlaneLayout, NM_PER_MM};
pub use pipeline::{
    process_frames, reconstruct, reconstruct_benchmark, reconstruct_parallel, write_reconstruction, PipelineError, ProcessedFrames, Reconstruction, RunReport,
    TiltSigma, WallTime, OCCUPANCY_LEVEL,
};
pub use volume::{dice, Axis, Plane, Slice, VolumeGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconError {
    #[error("scan coordinates are not strictly increasing at frame {index}")]
    NotMonotonic { index: usize },
    #[error("frame shape {found:?} differs from {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{frames} frames but {positions} scan positions")]
    LengthMismatch { frames: usize, positions: usize },
    #[error("volume grids differ: {a:?} vs {b:?}")]
    GridMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("at least two frames are needed")]
    TooFewFrames,
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("slice index {index} outside 0..{extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("worker count must be at least 1")]
    InvalidWorkers,
}
