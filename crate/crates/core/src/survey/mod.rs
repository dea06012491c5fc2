//! Survey tooling: experiment harness, cross-tile merging, density maps,
//! report tables, run configuration and manifests.

mod config;
mod density;
mod harness;
mod manifest;
mod merge;
mod pipeline;
mod table;

pub use config::{
    AugmentSettings, DensitySettings, DetPreset, DetectorSettings, MergeSettings, SrrSettings, SurveyConfig,
    SyntheticSettings, TilingSettings,
};
pub use density::{build_density_map, ground_sample_distance, heatmap_image, render_heatmap, DensityGrid};
pub use harness::{
    ablation_table, iq_table, peak_magnification, run_ablation, run_magnification_sweep, run_srr_benchmark,
    srr_detection_table, sweep_label, sweep_table, variant_config, AblationRow, DetEval, DetRow, SrrBenchmark,
    SweepRow, BICUBIC, HR,
};
pub use manifest::{sha256_file, InputFingerprint, RunDir, RunManifest, StageTiming, MANIFEST_FILE};
pub use merge::{
    detections_to_csv, merge_tile_detections, read_detections_csv, TileDetections, DEFAULT_MERGE_IOU, DETECTIONS_HEADER,
};
pub use pipeline::{run_report, ReportInputs, ReportSummary};
pub use table::Table;
