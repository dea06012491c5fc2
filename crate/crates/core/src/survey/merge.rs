use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::nms_indices;
use crate::error::{Error, Result};
use crate::tiling::{remap_box_to_global, BoundingBox, PixelBox, TileRecord, CLASS_NAMES};

/// IoU above which two frame-space detections of one class are duplicates.
pub const DEFAULT_MERGE_IOU: f64 = 0.5;

/// Detections of one tile, normalized to the tile side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileDetections {
    pub tile: TileRecord,
    pub detections: Vec<BoundingBox>,
}

/// Maps every tile's detections into frame pixels and removes cross-tile
/// duplicates with class-wise NMS. Survivors keep their class and
/// confidence and come out most confident first.
pub fn merge_tile_detections(tiles: &[TileDetections], merge_iou: f64) -> Result<Vec<PixelBox>> {
    if !(merge_iou > 0.0 && merge_iou <= 1.0) {
        return Err(Error::InvalidConfig(format!("merge IoU {merge_iou} outside (0, 1]")));
    }
    if let Some(first) = tiles.first() {
        if let Some(other) = tiles.iter().find(|t| t.tile.source_id != first.tile.source_id) {
            return Err(Error::MixedFrames(first.tile.source_id.clone(), other.tile.source_id.clone()));
        }
    }
    let global: Vec<PixelBox> =
        tiles.iter().flat_map(|t| t.detections.iter().map(move |d| remap_box_to_global(&t.tile, d))).collect();
    let triples: Vec<_> = global.iter().map(|b| (b.xyxy(), b.class_id, b.confidence)).collect();
    Ok(nms_indices(&triples, merge_iou).into_iter().map(|i| global[i]).collect())
}

pub const DETECTIONS_HEADER: &str = "class_id,class_name,cx,cy,w,h,confidence";

/// Frame-space detections as CSV with six-decimal coordinates.
pub fn detections_to_csv(dets: &[PixelBox]) -> String {
    let mut s = format!("{DETECTIONS_HEADER}\n");
    for d in dets {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            d.class_id, CLASS_NAMES[d.class_id], d.cx, d.cy, d.w, d.h, d.confidence
        );
    }
    s
}

/// Reads a file written by [`detections_to_csv`]. The class name column is
/// informational; `class_id` is authoritative.
pub fn read_detections_csv(path: impl AsRef<Path>) -> Result<Vec<PixelBox>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("{}: row {}: bad column {k}", path.display(), i + 1)))
        };
        let class_id = rec
            .get(0)
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&c| c < CLASS_NAMES.len())
            .ok_or_else(|| Error::Parse(format!("{}: row {}: bad class id", path.display(), i + 1)))?;
        out.push(PixelBox { class_id, cx: field(2)?, cy: field(3)?, w: field(4)?, h: field(5)?, confidence: field(6)? });
    }
    Ok(out)
}
