//! Seeded procedural scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pattern::zone_plate_plane;
use crate::io::RgbImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Gradients, flat shapes and soft stripes.
    #[default]
    Mixed,
    /// Coloured zone plates with random centre and sweep.
    ZonePlate,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "zone_plate" | "zoneplate" => Ok(Self::ZonePlate),
            _ => Err(format!("unknown scene kind {s:?} (mixed, zone_plate)")),
        }
    }
}

fn to_rgb(height: usize, width: usize, planes: [Vec<f64>; 3]) -> RgbImage {
    let mut data = Vec::with_capacity(3 * height * width);
    for i in 0..height * width {
        for p in &planes {
            data.push((p[i].clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8);
        }
    }
    RgbImage {
        width: width as u32,
        height: height as u32,
        data,
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ]
}

/// A background gradient with a few rectangles, discs and one stripe patch.
pub fn random_scene(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; height * width]);
    let (hf, wf) = (height as f64, width as f64);
    for i in 0..height * width {
        let (y, x) = ((i / width) as f64 / hf, (i % width) as f64 / wf);
        let t = (0.5 + 0.7 * ((x - 0.5) * ca + (y - 0.5) * sa)).clamp(0.0, 1.0);
        for (plane, (a, b)) in planes.iter_mut().zip(c0.iter().zip(&c1)) {
            plane[i] = a * (1.0 - t) + b * t;
        }
    }
    for _ in 0..rng.random_range(2..5) {
        let col = color(&mut rng);
        let disc = rng.random_bool(0.5);
        let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let (ry, rx) = (
            rng.random_range(0.1..0.35) * hf,
            rng.random_range(0.1..0.35) * wf,
        );
        for i in 0..height * width {
            let (dy, dx) = (
                ((i / width) as f64 - cy) / ry,
                ((i % width) as f64 - cx) / rx,
            );
            let inside = if disc {
                dy * dy + dx * dx <= 1.0
            } else {
                dy.abs() <= 1.0 && dx.abs() <= 1.0
            };
            if inside {
                for (plane, v) in planes.iter_mut().zip(col) {
                    plane[i] = v;
                }
            }
        }
    }
    // One patch of stripes, to give the texture branch something to do.
    let period = rng.random_range(3.0..10.0);
    let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
    let r = rng.random_range(0.15..0.3) * hf.min(wf);
    let amp = rng.random_range(0.1..0.3);
    for i in 0..height * width {
        let (y, x) = ((i / width) as f64, (i % width) as f64);
        if (y - cy).hypot(x - cx) <= r {
            let s = amp * (std::f64::consts::TAU * (x * ca + y * sa) / period).sin();
            for p in planes.iter_mut() {
                p[i] += s;
            }
        }
    }
    to_rgb(height, width, planes)
}

/// A zone plate tinted between two random colours, with its centre moved
/// off the frame centre and a random top frequency near Nyquist.
pub fn zone_plate_scene(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = rng.random_range(0.6..1.0);
    let (oy, ox) = (
        rng.random_range(0..=height / 2),
        rng.random_range(0..=width / 2),
    );
    // Render a larger plate and crop, which shifts the centre.
    let big = zone_plate_plane(height + height / 2, width + width / 2, k_max);
    let bw = width + width / 2;
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; height * width]);
    for y in 0..height {
        for x in 0..width {
            let t = big[(y + oy) * bw + x + ox];
            for c in 0..3 {
                planes[c][y * width + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    to_rgb(height, width, planes)
}
