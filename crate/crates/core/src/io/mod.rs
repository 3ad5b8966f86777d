//! On-disk formats and their loaders.

pub mod config;
pub mod dataset;
pub mod patch_file;
pub mod report;
pub mod state_file;
pub mod video;

pub use config::{config_to_string, load_config, parse_config, parse_config_with_overrides, save_config};
pub use dataset::{FrameDataset, Manifest, Split, split_dataset};
pub use patch_file::{decode_patch, encode_patch, load_patch, save_patch};
pub use report::{load_report, parse_report, save_report};
pub use state_file::{decode_state, encode_state, load_state, save_state};
pub use video::{IngestOptions, ingest_video};
