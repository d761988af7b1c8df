//! Frames, image decoding, resizing and scenario loading.

pub mod frame;
pub mod labels;
pub mod pgm;
pub mod resize;
pub mod scenario;

pub use frame::{AnomalyLabel, AnomalyLevel, Frame, MissionRelevance, Split, FRAME_PIXELS, FRAME_RATE, FRAME_SIDE};
pub use labels::{parse_labels, write_labels, SampleLabel};
pub use pgm::{decode_image, decode_pgm, encode_pgm, luma, quantize, GrayImage};
pub use resize::{resize_bilinear, to_frame_pixels};
pub use scenario::{check_normal_only, list_frames, load_scenario, read_frame_pixels, ScenarioDataset};
