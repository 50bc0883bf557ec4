//! Dataset loading: manifests, PNG frames and masks, SVG circle labels and
//! camera pose files, plus conversion of detection masks into [`Region`]s.
//!
//! [`Region`]: crate::model::Region

mod manifest;
mod png_io;
mod poses;
mod regions;
mod svg;

pub use manifest::{load_dataset, write_manifest, DatasetManifest, Segment};
pub use png_io::{read_png, write_png};
pub use poses::{load_poses, parse_poses, pose_from_quaternion, write_poses};
pub use regions::{mask_to_regions, DEFAULT_MIN_AREA};
pub use svg::{load_svg_labels, parse_svg_labels, write_svg_labels, Circle, GroundTruthLabel};
