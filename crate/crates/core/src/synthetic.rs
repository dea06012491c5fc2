//! Procedural beach scenes with labelled crabs, standing in for survey
//! imagery in tests, demos and the `report` pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;
use crate::tiling::PixelBox;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Number of crabs to place (fewer if placement keeps colliding).
    pub crabs: usize,
    /// Crab body diameter range in pixels.
    pub min_size: f64,
    pub max_size: f64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, crabs: usize) -> Self {
        let side = width.min(height) as f64;
        Self { width, height, crabs, min_size: (side * 0.12).max(4.0), max_size: (side * 0.2).max(6.0) }
    }
}

struct Crab {
    class_id: usize,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

struct Waves {
    phase: [f64; 4],
    freq: [f64; 4],
}

impl Waves {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            phase: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
            freq: std::array::from_fn(|_| rng.gen_range(0.15..0.6)),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        ((x * self.freq[0] + y * self.freq[1] * 0.3 + self.phase[0]).sin()
            + (y * self.freq[2] + x * 0.2 * self.freq[3] + self.phase[1]).sin() * 0.6
            + ((x + y) * self.freq[3] + self.phase[2]).sin() * 0.4)
            / 2.0
    }
}

fn hash_noise(x: usize, y: usize, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Renders one RGB scene. Crabs above the shoreline are class 0
/// (underwater), crabs below it class 1 (on sand). Same seed, same scene.
pub fn synth_scene<T: Scalar>(spec: &SceneSpec, seed: u64) -> Result<(ImageBuffer<T>, Vec<PixelBox>)> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(spec.min_size > 0.0 && spec.max_size >= spec.min_size) {
        return Err(Error::InvalidConfig(format!("crab size range {}..{}", spec.min_size, spec.max_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let shore_base = rng.gen_range(0.3..0.7) * h;
    let shore_amp = rng.gen_range(0.05..0.15) * h;
    let shore_freq = rng.gen_range(1.0..3.0) * std::f64::consts::TAU / w;
    let shore_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let shore = move |x: f64| shore_base + shore_amp * (x * shore_freq + shore_phase).sin();
    let waves = Waves::new(&mut rng);
    let noise_seed = rng.gen::<u64>();

    let mut crabs: Vec<Crab> = Vec::new();
    let mut attempts = 0;
    while crabs.len() < spec.crabs && attempts < spec.crabs * 50 {
        attempts += 1;
        let d = rng.gen_range(spec.min_size..=spec.max_size);
        let (rx, ry) = (d / 2.0, d / 2.0 * rng.gen_range(0.65..0.9));
        let margin = rx + 1.0;
        if w <= 2.0 * margin || h <= 2.0 * margin {
            break;
        }
        let cx = rng.gen_range(margin..w - margin);
        let cy = rng.gen_range(margin..h - margin);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        if crabs.iter().any(|c| (c.cx - cx).hypot(c.cy - cy) < (c.rx + rx) * 1.3) {
            continue;
        }
        let class_id = usize::from(cy >= shore(cx));
        crabs.push(Crab { class_id, cx, cy, rx, ry, angle });
    }

    let mut data = vec![T::zero(); spec.width * spec.height * 3];
    let plane = spec.width * spec.height;
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let n = hash_noise(x, y, noise_seed) - 0.5;
            let wv = waves.at(fx, fy);
            let mut rgb = if fy < shore(fx) {
                [0.12 + 0.05 * wv + 0.02 * n, 0.38 + 0.08 * wv + 0.02 * n, 0.52 + 0.10 * wv + 0.02 * n]
            } else {
                let grain = 0.03 * n + 0.06 * wv;
                [0.80 + grain, 0.70 + grain, 0.52 + grain]
            };
            for c in &crabs {
                let (dx, dy) = (fx - c.cx, fy - c.cy);
                let (s, co) = c.angle.sin_cos();
                let (u, v) = ((dx * co + dy * s) / c.rx, (-dx * s + dy * co) / c.ry);
                let r2 = u * u + v * v;
                if r2 <= 1.0 {
                    let stripe = if (u * 4.0).sin() > 0.3 { 0.08 } else { 0.0 };
                    rgb = match c.class_id {
                        0 => [0.55 + stripe - 0.15 * r2, 0.22 + 0.5 * stripe, 0.18],
                        _ => [0.35 + stripe - 0.12 * r2, 0.16, 0.08 + 0.5 * stripe],
                    };
                    if r2 > 0.72 {
                        rgb = [0.08, 0.06, 0.05];
                    }
                }
            }
            for (ch, v) in rgb.iter().enumerate() {
                data[ch * plane + y * spec.width + x] = T::of(v.clamp(0.0, 1.0));
            }
        }
    }
    let boxes = crabs
        .iter()
        .map(|c| {
            let (s, co) = c.angle.sin_cos();
            let hw = ((c.rx * co).powi(2) + (c.ry * s).powi(2)).sqrt();
            let hh = ((c.rx * s).powi(2) + (c.ry * co).powi(2)).sqrt();
            PixelBox { class_id: c.class_id, cx: c.cx, cy: c.cy, w: 2.0 * hw, h: 2.0 * hh, confidence: 1.0 }
        })
        .collect();
    Ok((ImageBuffer::new(spec.width, spec.height, 3, data)?, boxes))
}
