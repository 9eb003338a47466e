use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_exact, read_u32, Tensor};

pub const NUM_CLASSES: usize = 4;
pub const IMAGE_SIDE: usize = 16;
pub const NOISE_AMPLITUDE: f64 = 0.1;

pub const LBLS_MAGIC: [u8; 4] = *b"LBLS";
pub const LBLS_VERSION: u8 = 1;

pub const IMAGES_FILE: &str = "images.tnsr";
pub const LABELS_FILE: &str = "labels.lbls";

/// Grayscale 16x16 images of four procedural shape classes:
/// 0 horizontal bar, 1 vertical bar, 2 cross, 3 centred blob.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `i` as a `[1, 16, 16]` tensor.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.images.index_axis0(i)
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        self.labels.get(i).map(|&l| l as usize).ok_or_else(|| {
            Error::config(format!(
                "image index {i} out of range for {} images",
                self.len()
            ))
        })
    }

    /// Write `images.tnsr` and `labels.lbls` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.images.save(dir.join(IMAGES_FILE))?;
        let mut w = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
        write_labels(&self.labels, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let images = Tensor::load(dir.join(IMAGES_FILE))?;
        let labels = read_labels(BufReader::new(File::open(dir.join(LABELS_FILE))?))?;
        if images.dims().len() != 4 || images.dims()[0] != labels.len() {
            return Err(Error::format(format!(
                "images {:?} do not match {} labels",
                images.dims(),
                labels.len()
            )));
        }
        Ok(SyntheticDataset {
            images,
            labels,
            seed: 0,
        })
    }
}

pub fn write_labels<W: Write>(labels: &[u32], mut w: W) -> Result<()> {
    w.write_all(&LBLS_MAGIC)?;
    w.write_all(&[LBLS_VERSION])?;
    let n = u32::try_from(labels.len()).map_err(|_| Error::format("too many labels"))?;
    w.write_all(&n.to_le_bytes())?;
    for &l in labels {
        w.write_all(&l.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_labels<R: Read>(mut r: R) -> Result<Vec<u32>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != LBLS_MAGIC {
        return Err(Error::format(format!(
            "bad magic {magic:02x?}, expected \"LBLS\" {LBLS_MAGIC:02x?}"
        )));
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version)?;
    if version[0] != LBLS_VERSION {
        return Err(Error::format(format!(
            "unsupported LBLS version {}",
            version[0]
        )));
    }
    let n = read_u32(&mut r)? as usize;
    (0..n).map(|_| read_u32(&mut r)).collect()
}

/// Noise-free rendering of one example plus the rows/columns its bar occupies.
#[derive(Debug, Clone)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct CleanExample {
    pub pixels: Vec<f64>,
    pub band_rows: std::ops::Range<usize>,
}

pub(crate) fn draw_clean<R: Rng>(rng: &mut R, class: usize) -> CleanExample {
    let n = IMAGE_SIDE;
    let background = rng.random_range(0.0..0.15);
    let foreground = rng.random_range(0.7..1.0);
    let mut px = vec![background; n * n];
    let mut band_rows = 0..0;
    let thickness = rng.random_range(2..=3usize);
    let start = rng.random_range(2..=(n - 2 - thickness));
    let span_lo = rng.random_range(0..=3usize);
    let span_hi = rng.random_range(12..n);
    match class {
        0 => {
            for r in start..start + thickness {
                for c in span_lo..=span_hi {
                    px[r * n + c] = foreground;
                }
            }
            band_rows = start..start + thickness;
        }
        1 => {
            for r in span_lo..=span_hi {
                for c in start..start + thickness {
                    px[r * n + c] = foreground;
                }
            }
        }
        2 => {
            let other = rng.random_range(4..=10usize);
            for i in 0..n {
                for t in 0..2 {
                    px[(start + t) * n + i] = foreground;
                    px[i * n + other + t] = foreground;
                }
            }
        }
        _ => {
            let cy = 7.5 + rng.random_range(-1.5..1.5);
            let cx = 7.5 + rng.random_range(-1.5..1.5);
            let s: f64 = rng.random_range(2.0..3.5);
            for r in 0..n {
                for c in 0..n {
                    let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    px[r * n + c] =
                        background + (foreground - background) * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
    }
    CleanExample {
        pixels: px,
        band_rows,
    }
}

/// Deterministic dataset of `n` images emitted round-robin over the four classes.
pub fn generate_dataset(seed: u64, n: usize) -> Result<SyntheticDataset> {
    if n == 0 || !n.is_multiple_of(NUM_CLASSES) {
        return Err(Error::config(format!(
            "dataset size must be a positive multiple of 4, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = IMAGE_SIDE;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let class = k % NUM_CLASSES;
        let clean = draw_clean(&mut rng, class);
        data.extend(clean.pixels.iter().map(|&p| {
            let noise = rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
            // Round through f32 so the TNSR files hold exactly these values.
            ((p + noise).clamp(0.0, 1.0) as f32) as f64
        }));
        labels.push(class as u32);
    }
    Ok(SyntheticDataset {
        images: Tensor::new(vec![n, 1, side, side], data)?,
        labels,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_labels() {
        let ds = generate_dataset(1, 8).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        assert_eq!(ds.images.dims(), &[8, 1, 16, 16]);
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_uneven_size() {
        assert!(matches!(generate_dataset(1, 6), Err(Error::Config(_))));
    }

    #[test]
    fn horizontal_band_is_bright() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let ex = draw_clean(&mut rng, 0);
            let n = IMAGE_SIDE;
            let (mut band, mut nb, mut off, mut no) = (0.0, 0, 0.0, 0);
            for r in 0..n {
                let row: f64 = ex.pixels[r * n..(r + 1) * n].iter().sum();
                if ex.band_rows.contains(&r) {
                    band += row;
                    nb += n;
                } else {
                    off += row;
                    no += n;
                }
            }
            assert!(band / nb as f64 >= 2.0 * off / no as f64);
        }
    }

    #[test]
    fn labels_file_layout() {
        let mut buf = Vec::new();
        write_labels(&[3, 1], &mut buf).unwrap();
        assert_eq!(&buf[..5], b"LBLS\x01");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(read_labels(&buf[..]).unwrap(), vec![3, 1]);
        assert!(read_labels(&buf[..buf.len() - 2]).is_err());
    }
}
