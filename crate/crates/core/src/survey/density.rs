use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{save_image, ImageBuffer};
use crate::tiling::{PixelBox, CLASS_NAMES, NUM_CLASSES};

/// Metres on the ground covered by one pixel of a nadir camera.
pub fn ground_sample_distance(altitude_m: f64, fov_deg: f64, pixel_width: f64) -> Result<f64> {
    let ok = altitude_m > 0.0 && pixel_width > 0.0 && fov_deg > 0.0 && fov_deg < 180.0;
    if !ok || !(altitude_m.is_finite() && pixel_width.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "GSD needs positive altitude and width and 0 < fov < 180 (got {altitude_m}, {fov_deg}, {pixel_width})"
        )));
    }
    Ok(2.0 * altitude_m * (fov_deg.to_radians() / 2.0).tan() / pixel_width)
}

/// Per-cell detection counts over a frame, cells anchored at the frame origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    /// Cell side in frame pixels.
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    /// Row-major per-class counts.
    pub counts: Vec<[u64; NUM_CLASSES]>,
    /// Detections whose centre fell outside the frame.
    pub outside: u64,
}

/// Cell along one axis for coordinate `v`. A centre exactly on a boundary
/// goes to the lower-index cell, so cell `k` covers `(k·c, (k+1)·c]` (cell 0
/// also takes 0). `None` outside `[0, extent]`.
fn axis_cell(v: f64, cell: f64, n: usize, extent: f64) -> Option<usize> {
    if !(0.0..=extent).contains(&v) {
        return None;
    }
    let mut k = (v / cell).floor() as i64;
    while k > 0 && k as f64 * cell >= v {
        k -= 1;
    }
    while (k + 1) as f64 * cell < v {
        k += 1;
    }
    Some((k as usize).min(n - 1))
}

impl DensityGrid {
    pub fn cell_of(&self, x: f64, y: f64, frame_w: f64, frame_h: f64) -> Option<(usize, usize)> {
        Some((axis_cell(y, self.cell_size, self.rows, frame_h)?, axis_cell(x, self.cell_size, self.cols, frame_w)?))
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn class_total(&self, class_id: usize) -> u64 {
        self.counts.iter().map(|c| c[class_id]).sum()
    }

    pub fn max_count(&self) -> u64 {
        (0..self.rows * self.cols).map(|i| self.counts[i].iter().sum()).max().unwrap_or(0)
    }

    /// Counts per square metre of a cell, given metres per pixel.
    pub fn density_per_m2(&self, row: usize, col: usize, gsd_m: f64) -> f64 {
        let side_m = self.cell_size * gsd_m;
        self.count(row, col) as f64 / (side_m * side_m)
    }

    /// One row per cell: bounds in pixels, per-class and total counts, and
    /// (when `gsd_m` is given) the per-area density.
    pub fn to_csv(&self, gsd_m: Option<f64>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string(), "col".into(), "x0".into(), "y0".into(), "x1".into(), "y1".into()];
        header.extend(CLASS_NAMES.iter().map(|s| s.to_string()));
        header.push("total".into());
        if gsd_m.is_some() {
            header.push("per_m2".into());
        }
        w.write_record(&header)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cs = self.cell_size;
                let mut rec = vec![
                    r.to_string(),
                    c.to_string(),
                    format!("{:.3}", c as f64 * cs),
                    format!("{:.3}", r as f64 * cs),
                    format!("{:.3}", (c + 1) as f64 * cs),
                    format!("{:.3}", (r + 1) as f64 * cs),
                ];
                rec.extend(self.counts[r * self.cols + c].iter().map(|v| v.to_string()));
                rec.push(self.count(r, c).to_string());
                if let Some(g) = gsd_m {
                    rec.push(format!("{:.6}", self.density_per_m2(r, c, g)));
                }
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Assigns each detection to the cell holding its centre.
pub fn build_density_map(dets: &[PixelBox], cell_size: f64, frame_w: usize, frame_h: usize) -> Result<DensityGrid> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::InvalidConfig(format!("cell size {cell_size} must be positive")));
    }
    if frame_w == 0 || frame_h == 0 {
        return Err(Error::ZeroDimension);
    }
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let cols = ((fw / cell_size).ceil() as usize).max(1);
    let rows = ((fh / cell_size).ceil() as usize).max(1);
    let mut grid = DensityGrid { cell_size, cols, rows, counts: vec![[0; NUM_CLASSES]; cols * rows], outside: 0 };
    for d in dets {
        match grid.cell_of(d.cx, d.cy, fw, fh) {
            Some((r, c)) if d.class_id < NUM_CLASSES => grid.counts[r * cols + c][d.class_id] += 1,
            _ => grid.outside += 1,
        }
    }
    Ok(grid)
}

const COLD: [f64; 3] = [0.05, 0.07, 0.25];
const HOT: [f64; 3] = [1.0, 0.2, 0.0];

/// Heatmap raster: each cell a `px_per_cell` square block, colour linear in
/// the cell count from the cold colour (0) to the hot colour (grid maximum).
pub fn heatmap_image(grid: &DensityGrid, px_per_cell: usize) -> Result<ImageBuffer<f64>> {
    if px_per_cell == 0 {
        return Err(Error::InvalidConfig("heatmap block size must be positive".into()));
    }
    let max = grid.max_count();
    ImageBuffer::from_fn(grid.cols * px_per_cell, grid.rows * px_per_cell, 3, |x, y, ch| {
        let n = grid.count(y / px_per_cell, x / px_per_cell);
        let t = if max == 0 { 0.0 } else { n as f64 / max as f64 };
        COLD[ch] + t * (HOT[ch] - COLD[ch])
    })
}

/// Writes the heatmap PNG and a sidecar CSV of cell counts next to it.
/// Returns both paths.
pub fn render_heatmap(grid: &DensityGrid, out_path: impl AsRef<Path>, px_per_cell: usize, gsd_m: Option<f64>) -> Result<(PathBuf, PathBuf)> {
    let png = out_path.as_ref().to_path_buf();
    save_image(&heatmap_image(grid, px_per_cell)?, &png)?;
    let csv_path = png.with_extension("csv");
    std::fs::write(&csv_path, grid.to_csv(gsd_m)?)?;
    Ok((png, csv_path))
}
