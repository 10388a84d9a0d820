//! Readers and writers for every file the pipeline consumes or produces.

pub mod detections;
pub mod inputs;
pub mod json;
pub mod masks;
pub mod stream;
pub mod tracks;

pub use detections::{parse_detections, write_detections};
pub use inputs::{
    parse_config, parse_cuts, parse_extrinsics, parse_features, parse_pointcloud, write_config, write_cuts, write_extrinsics, write_features,
    write_pointcloud, ExtrinsicsFile,
};
pub use masks::{parse_masks, write_masks, MaskEntry, MaskFrame, RleMask};
pub use stream::{estimate_stream_size, write_stream, write_stream_to, StreamHeader, StreamReader};
pub use tracks::{parse_tracks, write_tracks};
