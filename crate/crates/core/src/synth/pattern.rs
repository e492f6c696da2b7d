//! Zone plates and the spectral measurements used to show aliasing.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::cfa::{mosaic, split_four, split_three};
use crate::io::{CfaPattern, RgbImage};
use crate::tensor::Tensor;

/// Grey radial chirp `0.5 + 0.5 sin(a r^2)` about the frame centre. The
/// local frequency `a r / pi` reaches `k_max` times Nyquist (half a cycle per
/// pixel) at the corners.
pub fn zone_plate_plane(height: usize, width: usize, k_max: f64) -> Vec<f64> {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let corner = (cy * cy + cx * cx).sqrt().max(f64::MIN_POSITIVE);
    let a = k_max * std::f64::consts::PI / (2.0 * corner);
    (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64 - cy, (i % width) as f64 - cx);
            0.5 + 0.5 * (a * (x * x + y * y)).sin()
        })
        .collect()
}

/// [`zone_plate_plane`] quantized into an 8-bit grey image.
pub fn zone_plate(height: usize, width: usize, k_max: f64) -> RgbImage {
    let plane = zone_plate_plane(height, width, k_max);
    let data = plane
        .iter()
        .flat_map(|&v| [(v * 255.0 + 0.5).floor() as u8; 3])
        .collect();
    RgbImage {
        width: width as u32,
        height: height as u32,
        data,
    }
}

/// Fraction of the 2-D DFT energy of `plane` whose radial frequency, in
/// cycles per sample, lies in `[lo, hi)`. The DC term has frequency 0.
pub fn aliasing_energy(plane: &[f64], height: usize, width: usize, band: (f64, f64)) -> f64 {
    assert_eq!(plane.len(), height * width, "plane is not {height}x{width}");
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(width);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        k / n as f64
    };
    let (mut inside, mut total) = (0.0, 0.0);
    for y in 0..height {
        for x in 0..width {
            let e = buf[y * width + x].norm_sqr();
            total += e;
            let r = freq(y, height).hypot(freq(x, width));
            if r >= band.0 && r < band.1 {
                inside += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct NyquistReport {
    /// Low-band energy fraction of the half-resolution Gr plane.
    pub four_channel: f64,
    /// Low-band energy fraction of the full-resolution G plane.
    pub three_channel: f64,
    /// Upper edge of the low band in cycles per full-resolution pixel.
    pub band: f64,
}

impl NyquistReport {
    pub fn ratio(&self) -> f64 {
        self.four_channel / self.three_channel
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Mosaics a `size x size` zone plate and compares the low-band energy of
/// the green samples under the two packings. The Gr plane of the
/// four-channel split holds every other row and column, so frequencies
/// above its Nyquist limit fold into the low band. The three-channel G plane
/// keeps every green sample at its own position; unsampled sites are set to
/// the plane mean, so they add nothing once the mean is removed.
///
/// `band` is in cycles per full-resolution pixel and must be below 0.25,
/// the Gr plane's Nyquist limit.
pub fn nyquist_demo(size: usize, k_max: f64, pattern: CfaPattern, band: f64) -> NyquistReport {
    let plane = zone_plate_plane(size, size, k_max);
    let rgb = Tensor::from_fn(&[3, size, size], |i| plane[i % (size * size)]);
    let raw = mosaic(&rgb, pattern).expect("even size");

    let four = split_four(&raw, pattern);
    let half = size / 2;
    let mut gr = four.tensor.channel(1).to_vec();
    remove_mean(&mut gr);
    // The subplane's own frequency unit is twice the full-resolution one.
    let four_channel = aliasing_energy(&gr, half, half, (0.0, 2.0 * band));

    let three = split_three(&raw, pattern);
    let sampled: Vec<bool> = (0..size * size)
        .map(|i| crate::cfa::is_sampled(pattern, 1, i / size, i % size))
        .collect();
    let g = three.tensor.channel(1);
    let mean = g
        .iter()
        .zip(&sampled)
        .filter(|(_, &s)| s)
        .map(|(v, _)| v)
        .sum::<f64>()
        / sampled.iter().filter(|&&s| s).count() as f64;
    let centred: Vec<f64> = g
        .iter()
        .zip(&sampled)
        .map(|(&v, &s)| if s { v - mean } else { 0.0 })
        .collect();
    let three_channel = aliasing_energy(&centred, size, size, (0.0, band));

    NyquistReport {
        four_channel,
        three_channel,
        band,
    }
}
