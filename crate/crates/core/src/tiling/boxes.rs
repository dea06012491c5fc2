use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of object classes.
pub const NUM_CLASSES: usize = 2;

/// Human-readable class names, indexed by class id.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["underwater", "on_sand"];

/// Class-tagged box with centre/size normalized to the tile side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// 1.0 for ground truth.
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> Result<Self> {
        let b = Self { class_id, cx, cy, w, h, confidence };
        b.validate()?;
        Ok(b)
    }

    pub fn ground_truth(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(class_id, cx, cy, w, h, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_id >= NUM_CLASSES {
            return Err(Error::Parse(format!("class id {} out of range", self.class_id)));
        }
        let finite = [self.cx, self.cy, self.w, self.h, self.confidence].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox(format!("{self:?}")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Parse(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn from_xyxy(class_id: usize, b: [f64; 4], confidence: f64) -> Self {
        Self {
            class_id,
            cx: (b[0] + b[2]) / 2.0,
            cy: (b[1] + b[3]) / 2.0,
            w: b[2] - b[0],
            h: b[3] - b[1],
            confidence,
        }
    }

    /// Clips to the unit square; `None` if nothing remains.
    pub fn clipped(&self) -> Option<Self> {
        let [x1, y1, x2, y2] = self.xyxy();
        let c = [x1.max(0.0), y1.max(0.0), x2.min(1.0), y2.min(1.0)];
        (c[2] > c[0] && c[3] > c[1]).then(|| Self::from_xyxy(self.class_id, c, self.confidence))
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Box in frame pixel coordinates (centre and size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl PixelBox {
    pub fn xyxy(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn from_xyxy(class_id: usize, b: [f64; 4], confidence: f64) -> Self {
        Self {
            class_id,
            cx: (b[0] + b[2]) / 2.0,
            cy: (b[1] + b[3]) / 2.0,
            w: b[2] - b[0],
            h: b[3] - b[1],
            confidence,
        }
    }

    /// Box relative to an image of the given pixel size.
    pub fn normalized(&self, width: f64, height: f64) -> BoundingBox {
        BoundingBox {
            class_id: self.class_id,
            cx: self.cx / width,
            cy: self.cy / height,
            w: self.w / width,
            h: self.h / height,
            confidence: self.confidence,
        }
    }

    pub fn from_normalized(b: &BoundingBox, width: f64, height: f64) -> Self {
        Self {
            class_id: b.class_id,
            cx: b.cx * width,
            cy: b.cy * height,
            w: b.w * width,
            h: b.h * height,
            confidence: b.confidence,
        }
    }
}

fn parse_line(line: &str, lineno: usize, with_conf: Option<bool>) -> Result<BoundingBox> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let ok_len = match with_conf {
        Some(true) => fields.len() == 6,
        Some(false) => fields.len() == 5,
        None => fields.len() == 5 || fields.len() == 6,
    };
    if !ok_len {
        return Err(Error::Parse(format!("line {lineno}: expected 5 or 6 fields, got {}", fields.len())));
    }
    let class_id = fields[0]
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("line {lineno}: class id: {e}")))?;
    let mut nums = [0.0; 5];
    nums[4] = 1.0;
    for (i, f) in fields[1..].iter().enumerate() {
        nums[i] = f.parse::<f64>().map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
    }
    BoundingBox::new(class_id, nums[0], nums[1], nums[2], nums[3], nums[4])
}

/// Parses `class_id cx cy w h` lines (an optional sixth field is read as the
/// confidence). Blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<BoundingBox>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1, None))
        .collect()
}

/// Parses a prediction dump: `class_id cx cy w h confidence` per line.
pub fn parse_predictions(text: &str) -> Result<Vec<BoundingBox>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1, Some(true)))
        .collect()
}

pub fn format_labels(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h);
    }
    s
}

pub fn format_predictions(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{} {:.6} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h, b.confidence);
    }
    s
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_labels(&std::fs::read_to_string(path)?)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_predictions(&std::fs::read_to_string(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, boxes: &[BoundingBox]) -> Result<()> {
    std::fs::write(path, format_labels(boxes))?;
    Ok(())
}

pub fn write_predictions(path: impl AsRef<Path>, boxes: &[BoundingBox]) -> Result<()> {
    std::fs::write(path, format_predictions(boxes))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_lines() {
        let boxes = parse_labels("0 0.5 0.25 0.1 0.2\n\n1 0.1 0.9 0.05 0.05\n").unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[1].class_id, 1);
        assert_eq!(boxes[0].confidence, 1.0);
        assert_eq!(format_labels(&boxes), "0 0.500000 0.250000 0.100000 0.200000\n1 0.100000 0.900000 0.050000 0.050000\n");
        let preds = parse_predictions("1 0.5 0.5 0.2 0.2 0.75").unwrap();
        assert_eq!(preds[0].confidence, 0.75);
        assert!(parse_predictions("1 0.5 0.5 0.2 0.2").is_err());
        assert!(parse_labels("3 0.5 0.5 0.2 0.2").is_err());
        assert!(parse_labels("0 0.5 0.5 0 0.2").is_err());
        assert!(parse_labels("0 0.5 x 0.1 0.2").is_err());
    }

    #[test]
    fn clip_to_unit_square() {
        let b = BoundingBox::ground_truth(0, 0.95, 0.5, 0.2, 0.2).unwrap();
        let c = b.clipped().unwrap();
        assert!((c.xyxy()[2] - 1.0).abs() < 1e-12);
        assert!((c.w - 0.15).abs() < 1e-12);
        let out = BoundingBox::ground_truth(0, 1.5, 0.5, 0.2, 0.2).unwrap();
        assert!(out.clipped().is_none());
    }
}
