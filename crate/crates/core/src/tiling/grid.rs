use std::path::Path;

use serde::{Deserialize, Serialize};

use super::boxes::{BoundingBox, PixelBox};
use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;
use crate::Scalar;

/// How the last row/column of tiles is handled when the frame is not an
/// exact multiple of the stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Only full windows inside the frame.
    DropPartial,
    /// Adds a final window flush with the far edge; frames smaller than the
    /// window yield one reflect-padded tile.
    PadReflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub window: usize,
    pub stride: usize,
    pub edge_policy: EdgePolicy,
}

impl TileGrid {
    pub fn new(window: usize, stride: usize, edge_policy: EdgePolicy) -> Result<Self> {
        let g = Self { window, stride, edge_policy };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.window == 0 || self.stride > self.window {
            return Err(Error::InvalidConfig(format!(
                "tile grid needs 0 < stride <= window (window {}, stride {})",
                self.window, self.stride
            )));
        }
        Ok(())
    }

    /// Tile offsets along one axis of length `dim`.
    pub fn offsets(&self, dim: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if dim < self.window {
            return match self.edge_policy {
                EdgePolicy::DropPartial => Err(Error::ImageTooSmall { width: dim, height: dim, required: self.window }),
                EdgePolicy::PadReflect => Ok(vec![0]),
            };
        }
        let mut offs: Vec<usize> = (0..).map(|k| k * self.stride).take_while(|o| o + self.window <= dim).collect();
        if self.edge_policy == EdgePolicy::PadReflect {
            let last = dim - self.window;
            if offs.last() != Some(&last) {
                offs.push(last);
            }
        }
        Ok(offs)
    }
}

/// Provenance of one tile within its source frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRecord {
    pub source_id: String,
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

/// Row-major tile plan for a `frame_w × frame_h` frame.
pub fn plan_tiles(source_id: &str, frame_w: usize, frame_h: usize, grid: &TileGrid) -> Result<Vec<TileRecord>> {
    if frame_w == 0 || frame_h == 0 {
        return Err(Error::ZeroDimension);
    }
    let too_small = || Error::ImageTooSmall { width: frame_w, height: frame_h, required: grid.window };
    let xs = grid.offsets(frame_w).map_err(|_| too_small())?;
    let ys = grid.offsets(frame_h).map_err(|_| too_small())?;
    Ok(ys
        .iter()
        .flat_map(|&y0| {
            xs.iter().map(move |&x0| TileRecord { source_id: source_id.to_string(), x0, y0, side: grid.window })
        })
        .collect())
}

/// Cuts the tile out of its frame, mirroring pixels beyond the border.
pub fn extract_tile<T: Scalar>(frame: &ImageBuffer<T>, tile: &TileRecord) -> Result<ImageBuffer<T>> {
    frame.crop_reflect(tile.x0 as isize, tile.y0 as isize, tile.side, tile.side)
}

/// Fraction of its original area a box must keep inside a tile to be labelled there.
pub const MIN_VISIBLE_FRACTION: f64 = 0.2;

/// Frame-space labels restricted to one tile and normalized to its side.
pub fn tile_labels(frame_boxes: &[PixelBox], tile: &TileRecord) -> Vec<BoundingBox> {
    let side = tile.side as f64;
    let (tx, ty) = (tile.x0 as f64, tile.y0 as f64);
    frame_boxes
        .iter()
        .filter_map(|b| {
            let [x1, y1, x2, y2] = b.xyxy();
            let c = [x1.max(tx), y1.max(ty), x2.min(tx + side), y2.min(ty + side)];
            if c[2] <= c[0] || c[3] <= c[1] {
                return None;
            }
            let kept = (c[2] - c[0]) * (c[3] - c[1]);
            if kept < MIN_VISIBLE_FRACTION * b.w * b.h {
                return None;
            }
            let local = [(c[0] - tx) / side, (c[1] - ty) / side, (c[2] - tx) / side, (c[3] - ty) / side];
            Some(BoundingBox::from_xyxy(b.class_id, local, b.confidence))
        })
        .collect()
}

/// One row of a tile manifest CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    pub tile_path: String,
}

impl ManifestRow {
    pub fn record(&self) -> TileRecord {
        TileRecord { source_id: self.source_id.clone(), x0: self.x0, y0: self.y0, side: self.side }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(policy: EdgePolicy) -> TileGrid {
        TileGrid::new(640, 320, policy).unwrap()
    }

    #[test]
    fn survey_frame_count() {
        let tiles = plan_tiles("f", 5472, 3648, &grid(EdgePolicy::DropPartial)).unwrap();
        assert_eq!(tiles.len(), 16 * 10);
        assert_eq!((tiles[1].x0, tiles[1].y0), (320, 0));
        assert_eq!((tiles[16].x0, tiles[16].y0), (0, 320));
    }

    #[test]
    fn small_frames() {
        let one = plan_tiles("f", 640, 640, &grid(EdgePolicy::DropPartial)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].x0, one[0].y0), (0, 0));
        let two = plan_tiles("f", 960, 640, &grid(EdgePolicy::DropPartial)).unwrap();
        assert_eq!(two.iter().map(|t| t.x0).collect::<Vec<_>>(), vec![0, 320]);
        assert!(plan_tiles("f", 500, 700, &grid(EdgePolicy::DropPartial)).is_err());
        assert_eq!(plan_tiles("f", 500, 700, &grid(EdgePolicy::PadReflect)).unwrap().len(), 2);
        assert!(TileGrid::new(640, 700, EdgePolicy::DropPartial).is_err());
    }

    #[test]
    fn pad_reflect_adds_flush_tile() {
        let g = grid(EdgePolicy::PadReflect);
        assert_eq!(g.offsets(1000).unwrap(), vec![0, 320, 360]);
        assert_eq!(g.offsets(960).unwrap(), vec![0, 320]);
    }

    #[test]
    fn labels_clip_and_drop() {
        let tile = TileRecord { source_id: "f".into(), x0: 100, y0: 100, side: 100 };
        let inside = PixelBox { class_id: 1, cx: 150.0, cy: 150.0, w: 10.0, h: 10.0, confidence: 1.0 };
        let half = PixelBox { class_id: 0, cx: 100.0, cy: 150.0, w: 20.0, h: 10.0, confidence: 1.0 };
        let sliver = PixelBox { class_id: 0, cx: 92.0, cy: 150.0, w: 20.0, h: 10.0, confidence: 1.0 };
        let labels = tile_labels(&[inside, half, sliver], &tile);
        assert_eq!(labels.len(), 2);
        assert!((labels[0].cx - 0.5).abs() < 1e-12 && (labels[0].w - 0.1).abs() < 1e-12);
        assert!((labels[1].cx - 0.05).abs() < 1e-12 && (labels[1].w - 0.1).abs() < 1e-12);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            ManifestRow { source_id: "a".into(), x0: 0, y0: 320, side: 640, tile_path: "t/a_0.png".into() },
            ManifestRow { source_id: "a".into(), x0: 320, y0: 320, side: 640, tile_path: "t/a_1.png".into() },
        ];
        write_manifest(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("source_id,x0,y0,side,tile_path\n"));
        assert_eq!(read_manifest(&p).unwrap(), rows);
    }
}
