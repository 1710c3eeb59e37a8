//! Persistent formats: recording containers, model blobs, JSON documents,
//! CSV tables and SVG plots.

mod container;
mod docs;
mod model;
mod plot;

pub use container::{
    decode_recording, encode_recording, read_recording, write_recording, DTYPE_F32,
    RECORDING_MAGIC, RECORDING_VERSION,
};
pub use docs::{
    config_hash, dataset_to_recording, qc_input, qc_report, read_json, recording_to_dataset,
    to_json_string, write_json, CrossValidationDoc, GroundTruthDoc, QcInput, QcReport,
    CROSSVAL_SCHEMA_VERSION, DATASET_KIND, GROUND_TRUTH_SCHEMA_VERSION,
    QC_SCHEMA_VERSION,
};
pub use model::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use plot::{
    confusion_csv, confusion_svg, signals_csv, signals_svg, spikes_csv, units_csv, xml_escape,
    CONFUSION_CSV_HEADER, SPIKES_CSV_HEADER, UNITS_CSV_HEADER,
};
