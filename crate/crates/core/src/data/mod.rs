//! Synthetic OCT-like volumes, dataset splits and file formats.

pub mod dataset;
pub mod format;
pub mod generator;
pub mod splits;

pub use dataset::{generator_text, write_dataset, Dataset};
pub use format::{
    decode_tensor, encode_pgm, encode_tensor, export_pgm, gray_level, load_tensor, parse_key_values, parse_pgm,
    save_tensor, Pgm,
};
pub use generator::{
    generate_corpus, generate_volume, volume_id, CorpusParams, Disease, GeneratorParams, Geometry,
    Volume,
};
pub use splits::{make_splits, Split, SplitCounts, SplitManifest};
