use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetStore, ImageShape};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

pub fn read_idx_images(r: impl Read) -> Result<IdxImages> {
    let mut r = BufReader::new(r);
    let magic = read_u32(&mut r)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let mut pixels = vec![0u8; count * height * width];
    r.read_exact(&mut pixels)?;
    Ok(IdxImages { count, height, width, pixels })
}

pub fn read_idx_labels(r: impl Read) -> Result<Vec<u8>> {
    let mut r = BufReader::new(r);
    let magic = read_u32(&mut r)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

pub fn write_idx_images(w: impl Write, images: &IdxImages) -> Result<()> {
    let mut w = BufWriter::new(w);
    for v in [IMAGE_MAGIC, images.count as u32, images.height as u32, images.width as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(w: impl Write, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Map a pixel byte linearly from `[0, 255]` onto `[-1, 1]`.
#[inline]
pub(crate) fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

#[inline]
pub fn unit_to_byte(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Load an IDX image file (and optionally its label file) into a store with
/// pixels normalized to `[-1, 1]`.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<DatasetStore> {
    let images = read_idx_images(File::open(images_path)?)?;
    let labels = labels_path
        .map(|p| read_idx_labels(File::open(p)?))
        .transpose()?;
    from_idx(&images, labels.as_deref())
}

/// Decode in-memory IDX contents into a store.
pub fn from_idx(images: &IdxImages, labels: Option<&[u8]>) -> Result<DatasetStore> {
    if let Some(labels) = labels {
        if labels.len() != images.count {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
    }
    let shape = ImageShape { channels: 1, height: images.height, width: images.width };
    let data = images.pixels.iter().map(|&b| byte_to_unit(b)).collect();
    DatasetStore::from_flat(
        data,
        shape.len(),
        Some(shape),
        labels.map(|l| l.iter().map(|&v| v as u32).collect()),
    )
}

impl DatasetStore {
    /// Re-encode an image store as IDX pixel bytes.
    pub fn to_idx(&self) -> Result<IdxImages> {
        let shape = self
            .shape()
            .filter(|s| s.channels == 1)
            .ok_or_else(|| Error::Precondition("store is not a grayscale image set".into()))?;
        let pixels = (0..self.len())
            .flat_map(|i| self.sample(i).iter().map(|&x| unit_to_byte(x)))
            .collect();
        Ok(IdxImages { count: self.len(), height: shape.height, width: shape.width, pixels })
    }
}
