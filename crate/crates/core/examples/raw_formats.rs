//! Writes a RAWI frame and a PPM image to memory and reads them back.

use rmfa::io::{read_ppm, read_raw, write_ppm, write_raw, CfaPattern, RawImage, RgbImage};

fn main() -> anyhow::Result<()> {
    let (w, h) = (8u32, 6u32);
    let data = (0..w * h).map(|i| 63 + (i as u16 * 85) % 4000).collect();
    let raw = RawImage::new(w, h, CfaPattern::Rggb, 63, 4095, 12, data)?;
    let mut bytes = Vec::new();
    let n = write_raw(&raw, &mut bytes)?;
    let back = read_raw(bytes.as_slice())?;
    println!(
        "RAWI {}x{} {}: {n} bytes, round trip {}",
        w,
        h,
        raw.pattern,
        back == raw
    );
    println!(
        "  top-left tile {:?}",
        [raw.get(0, 0), raw.get(0, 1), raw.get(1, 0), raw.get(1, 1)]
    );

    let rgb = RgbImage::filled(5, 3, [200, 120, 40]);
    let mut bytes = Vec::new();
    write_ppm(&rgb, &mut bytes)?;
    println!(
        "PPM 5x3: {} bytes, round trip {}",
        bytes.len(),
        read_ppm(bytes.as_slice())? == rgb
    );
    Ok(())
}
