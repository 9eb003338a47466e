//! Netpbm export for images and explanation maps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::attribution::ExplanationMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Min-max normalise to 0..=255. A constant map renders mid-gray.
pub fn map_to_gray(map: &ExplanationMap) -> Vec<u8> {
    let (lo, hi) = map
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![128; map.values().len()];
    }
    map.values()
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Binary 8-bit PGM (P5).
pub fn write_pgm<W: Write>(map: &ExplanationMap, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", map.width(), map.height())?;
    w.write_all(&map_to_gray(map))?;
    Ok(())
}

/// Binary PPM (P6) of a `[c, h, w]` image with values in `[0, 1]`. Single-channel
/// images are replicated to gray RGB.
pub fn write_ppm<W: Write>(image: &Tensor, mut w: W) -> Result<()> {
    let &[c, h, wd] = image.dims() else {
        return Err(Error::shape(format!(
            "expected [c, h, w] image, got {:?}",
            image.dims()
        )));
    };
    if c != 1 && c != 3 {
        return Err(Error::shape(format!("PPM needs 1 or 3 channels, got {c}")));
    }
    write!(w, "P6\n{wd} {h}\n255\n")?;
    let plane = h * wd;
    let d = image.data();
    let mut bytes = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            let v = d[if c == 1 { p } else { ch * plane + p }];
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm(map: &ExplanationMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(image, &mut w)?;
    w.flush()?;
    Ok(())
}
