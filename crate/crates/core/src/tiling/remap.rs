use super::boxes::{BoundingBox, PixelBox};
use super::grid::TileRecord;

/// Tile-normalized box in frame pixel coordinates.
pub fn remap_box_to_global(tile: &TileRecord, b: &BoundingBox) -> PixelBox {
    let side = tile.side as f64;
    PixelBox {
        class_id: b.class_id,
        cx: tile.x0 as f64 + b.cx * side,
        cy: tile.y0 as f64 + b.cy * side,
        w: b.w * side,
        h: b.h * side,
        confidence: b.confidence,
    }
}

/// Inverse of [`remap_box_to_global`]; no clipping is applied.
pub fn normalize_to_tile(tile: &TileRecord, b: &PixelBox) -> BoundingBox {
    let side = tile.side as f64;
    BoundingBox {
        class_id: b.class_id,
        cx: (b.cx - tile.x0 as f64) / side,
        cy: (b.cy - tile.y0 as f64) / side,
        w: b.w / side,
        h: b.h / side,
        confidence: b.confidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_round_trip() {
        let tile = TileRecord { source_id: "f".into(), x0: 320, y0: 0, side: 640 };
        let b = BoundingBox::new(1, 0.5, 0.5, 0.1, 0.05, 0.7).unwrap();
        let g = remap_box_to_global(&tile, &b);
        assert_eq!((g.cx, g.cy, g.w, g.h), (640.0, 320.0, 64.0, 32.0));
        assert_eq!((g.class_id, g.confidence), (1, 0.7));
        let back = normalize_to_tile(&tile, &g);
        for (u, v) in [(back.cx, b.cx), (back.cy, b.cy), (back.w, b.w), (back.h, b.h)] {
            assert!((u - v).abs() < 1e-12);
        }
        let origin = TileRecord { source_id: "f".into(), x0: 0, y0: 0, side: 640 };
        let g = remap_box_to_global(&origin, &b);
        assert_eq!((g.cx, g.w), (320.0, 64.0));
    }
}
