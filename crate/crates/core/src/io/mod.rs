//! Dataset ingestion, model files and exports.

pub mod export;
pub mod idx;
pub mod model_file;
pub mod synth_cache;
pub mod trace;

pub use export::{
    encode_pgm, export_histogram_csv, export_metrics_jsonl, export_pgm, histogram_csv,
    write_metrics_line,
};
pub use idx::{
    default_mnist_dir, load_mnist, load_mnist_test, parse_idx, read_idx, IdxTensor, Mnist,
};
pub use model_file::{
    cascade_from_json, cascade_to_json, forest_from_json, forest_to_json, load_cascade, load_model,
    save_cascade, save_model, TrainingMeta, FORMAT_VERSION,
};
pub use synth_cache::{
    decode_synth_cache, encode_synth_cache, read_synth_cache, write_synth_cache,
};
pub use trace::{dsm_file_name, write_trace, TraceRecord, TracedMap};
