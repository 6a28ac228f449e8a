//! File formats, synthetic benchmarks and the command-line driver.

pub mod cli;
pub mod dataset_file;
pub mod idx;
pub mod model_file;
pub mod synth;

pub use cli::dispatch;
pub use dataset_file::{load_dataset, save_dataset, DatasetFile};
pub use idx::{encode_images, encode_labels, load_idx, parse_idx, IdxOptions};
pub use model_file::{
    load_ann, load_model, load_snn, save_model, LayerRecord, ModelFile, ModelKind,
};
pub use synth::{synth_uniform_benchmark, PatternConfig, PatternTask};
