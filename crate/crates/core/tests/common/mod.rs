//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use crabwatch::ImageBuffer;
use rand::Rng;

/// Direct PSNR on the 8-bit scale.
pub fn brute_psnr(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> f64 {
    let n = a.data().len() as f64;
    let mut sse = 0.0;
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = 255.0 * a.get(x, y, c) - 255.0 * b.get(x, y, c);
                sse += d * d;
            }
        }
    }
    10.0 * (255.0f64.powi(2) / (sse / n)).log10()
}

/// Naive SSIM: every fully-contained 11×11 window, 2-D Gaussian weights
/// (σ = 1.5) built directly, statistics summed over the window.
pub fn brute_ssim(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> f64 {
    const W: usize = 11;
    let mut kernel = [[0.0f64; W]; W];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *k;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut per_channel = Vec::new();
    for c in 0..a.channels() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=a.height() - W {
            for x0 in 0..=a.width() - W {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        let k = kernel[i][j] / total;
                        mx += k * 255.0 * a.get(x0 + j, y0 + i, c);
                        my += k * 255.0 * b.get(x0 + j, y0 + i, c);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        let k = kernel[i][j] / total;
                        let dx = 255.0 * a.get(x0 + j, y0 + i, c) - mx;
                        let dy = 255.0 * b.get(x0 + j, y0 + i, c) - my;
                        vx += k * dx * dx;
                        vy += k * dy * dy;
                        cov += k * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel.push(acc / count as f64);
    }
    per_channel.iter().sum::<f64>() / per_channel.len() as f64
}

/// AP as a sum over true positives: each one found at rank k adds
/// `1/num_gt` times the best precision at rank k or later.
pub fn brute_ap(hits: &[bool], num_gt: usize) -> f64 {
    let precision_at = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let best = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            ap += best / num_gt as f64;
        }
    }
    ap
}

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize, c: usize) -> ImageBuffer<f64> {
    ImageBuffer::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..=1.0)).unwrap()
}

/// Reference suppression: repeatedly take the most confident remaining box
/// and strike every remaining box of its class overlapping it by more than
/// `thr`. Quadratic on purpose.
pub fn brute_nms(dets: &[crabwatch::tiling::BoundingBox], thr: f64) -> Vec<crabwatch::tiling::BoundingBox> {
    fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
        let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = w * h;
        let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.map_or(true, |b| dets[i].confidence > dets[b].confidence) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        out.push(dets[b]);
        for j in 0..dets.len() {
            if alive[j] && dets[j].class_id == dets[b].class_id && iou(dets[j].xyxy(), dets[b].xyxy()) > thr {
                alive[j] = false;
            }
        }
    }
    out
}
