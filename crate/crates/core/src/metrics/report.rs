use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqRecord {
    pub image_id: String,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub images: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image quality scores for one or more methods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IqReport {
    pub records: Vec<IqRecord>,
}

impl IqReport {
    pub fn push(&mut self, image_id: impl Into<String>, method: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.records.push(IqRecord { image_id: image_id.into(), method: method.into(), psnr_db, ssim });
    }

    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.method) {
                seen.push(r.method.clone());
            }
        }
        seen
    }

    /// Arithmetic means per method, in first-seen order.
    pub fn summaries(&self) -> Vec<MethodSummary> {
        let mut acc: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
        for r in &self.records {
            let e = acc.entry(&r.method).or_default();
            e.0 += 1;
            e.1 += r.psnr_db;
            e.2 += r.ssim;
        }
        self.methods()
            .into_iter()
            .map(|m| {
                let (n, p, s) = acc[m.as_str()];
                MethodSummary { method: m, images: n, psnr_db: p / n as f64, ssim: s / n as f64 }
            })
            .collect()
    }

    pub fn summary(&self, method: &str) -> Option<MethodSummary> {
        self.summaries().into_iter().find(|s| s.method == method)
    }

    /// `image_id,method,psnr_db,ssim`, then one `mean` row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,method,psnr_db,ssim\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.image_id, r.method, r.psnr_db, r.ssim));
        }
        for s in self.summaries() {
            out.push_str(&format!("mean,{},{:.6},{:.6}\n", s.method, s.psnr_db, s.ssim));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_are_means() {
        let mut r = IqReport::default();
        r.push("a", "bicubic", 30.0, 0.8);
        r.push("a", "rdn", 32.0, 0.9);
        r.push("b", "bicubic", 34.0, 0.6);
        let s = r.summary("bicubic").unwrap();
        assert_eq!((s.images, s.psnr_db), (2, 32.0));
        assert!((s.ssim - 0.7).abs() < 1e-12);
        assert_eq!(r.methods(), vec!["bicubic", "rdn"]);
        let csv = r.to_csv();
        assert!(csv.ends_with("mean,bicubic,32.000000,0.700000\nmean,rdn,32.000000,0.900000\n"));
    }
}
