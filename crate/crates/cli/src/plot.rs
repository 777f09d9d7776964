use std::path::Path;

use anyhow::{Context as _, Result};
use image::{Rgb, RgbImage};

const CELL: u32 = 12;

/// Blue through yellow to red.
fn ramp(f: f64) -> Rgb<u8> {
    let f = f.clamp(0.0, 1.0);
    let stops = [(49.0, 54.0, 149.0), (255.0, 255.0, 191.0), (165.0, 0.0, 38.0)];
    let (a, b, u) = if f < 0.5 { (stops[0], stops[1], f * 2.0) } else { (stops[1], stops[2], f * 2.0 - 1.0) };
    let mix = |x: f64, y: f64| (x + (y - x) * u).round() as u8;
    Rgb([mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2)])
}

/// Cells laid out row-major on the smallest square grid that holds them;
/// negative values are drawn as zero.
pub fn write_png(path: &Path, values: &[i64]) -> Result<()> {
    let side = (values.len() as f64).sqrt().ceil().max(1.0) as u32;
    let rows = (values.len() as u32).div_ceil(side).max(1);
    let max = values.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut img = RgbImage::from_pixel(side * CELL, rows * CELL, Rgb([230, 230, 230]));
    for (i, &v) in values.iter().enumerate() {
        let (cx, cy) = (i as u32 % side, i as u32 / side);
        let colour = ramp(v.max(0) as f64 / max);
        for y in 0..CELL - 1 {
            for x in 0..CELL - 1 {
                img.put_pixel(cx * CELL + x, cy * CELL + y, colour);
            }
        }
    }
    img.save(path).with_context(|| format!("cannot write {}", path.display()))
}
