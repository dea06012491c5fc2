//! Sliding-window tiling, label-consistent augmentation and tile ↔ frame
//! coordinate mapping.

mod augment;
mod boxes;
mod grid;
mod remap;

pub use augment::{augment, default_recipe, expand_dataset, AugmentOp, GeoOp, Provenance, Sample, DEFAULT_SCALES};
pub use boxes::{
    format_labels, format_predictions, parse_labels, parse_predictions, read_labels, read_predictions, write_labels,
    write_predictions, BoundingBox, PixelBox, CLASS_NAMES, NUM_CLASSES,
};
pub use grid::{
    extract_tile, plan_tiles, read_manifest, tile_labels, write_manifest, EdgePolicy, ManifestRow, TileGrid,
    TileRecord, MIN_VISIBLE_FRACTION,
};
pub use remap::{normalize_to_tile, remap_box_to_global};
