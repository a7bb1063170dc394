//! On-disk formats (feature blobs, netpbm images, manifests and annotation
//! files) and dataset assembly.

pub mod blob;
pub(crate) mod bytes;
pub mod dataset;
pub mod image;
pub mod text;

pub use blob::{decode_blob, encode_blob, read_blob, write_blob};
pub use dataset::{
    featurize_sample, generate_toy_samples, load_dataset, write_dataset, write_toy_dataset, Sample, ToyConfig,
};
pub use image::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm, GrayImage};
pub use text::{parse_boxes, parse_keypoints, read_boxes, read_keypoints, Manifest, ManifestRecord};
