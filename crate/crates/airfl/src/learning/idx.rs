//! Reader and writer for the IDX byte format used by classic image corpora.
//!
//! Layout is big-endian throughout: a 4-byte magic (`0x0000, type code,
//! dimension count`), one u32 per dimension, then the payload. Only the
//! unsigned-byte type (code `0x08`) is supported, as rank-3 image files and
//! rank-1 label files.

use super::Dataset;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug)]
pub enum IdxError {
    Io(io::Error),
    BadMagic { expected: u32, found: u32 },
    Truncated { expected: usize, found: usize },
    Mismatch(String),
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::Io(e) => write!(f, "io error: {e}"),
            IdxError::BadMagic { expected, found } => {
                write!(f, "bad magic: expected {expected:#010x}, found {found:#010x}")
            }
            IdxError::Truncated { expected, found } => {
                write!(f, "truncated payload: expected {expected} bytes, found {found}")
            }
            IdxError::Mismatch(s) => write!(f, "{s}"),
        }
    }
}

impl std::error::Error for IdxError {}

impl From<io::Error> for IdxError {
    fn from(e: io::Error) -> Self {
        IdxError::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, IdxError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse a rank-3 image file into (count, rows, cols, pixels).
pub fn read_images(r: &mut impl Read) -> Result<(usize, usize, usize, Vec<u8>), IdxError> {
    let magic = read_u32(r)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(r)? as usize;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let expected = n * rows * cols;
    let mut data = Vec::with_capacity(expected);
    r.read_to_end(&mut data)?;
    if data.len() != expected {
        return Err(IdxError::Truncated {
            expected,
            found: data.len(),
        });
    }
    Ok((n, rows, cols, data))
}

/// Parse a rank-1 label file.
pub fn read_labels(r: &mut impl Read) -> Result<Vec<u8>, IdxError> {
    let magic = read_u32(r)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(n);
    r.read_to_end(&mut data)?;
    if data.len() != n {
        return Err(IdxError::Truncated {
            expected: n,
            found: data.len(),
        });
    }
    Ok(data)
}

pub fn write_images(w: &mut impl Write, rows: usize, cols: usize, pixels: &[u8]) -> io::Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let n = pixels.len() / (rows * cols);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(n as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    w.write_all(pixels)
}

pub fn write_labels(w: &mut impl Write, labels: &[u8]) -> io::Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}

/// Load an image/label file pair into a dataset with pixels scaled to [0,1].
pub fn load_pair(images: &Path, labels: &Path) -> Result<Dataset, IdxError> {
    let (n, rows, cols, pixels) = read_images(&mut File::open(images)?)?;
    let raw_labels = read_labels(&mut File::open(labels)?)?;
    if raw_labels.len() != n {
        return Err(IdxError::Mismatch(format!(
            "{n} images but {} labels",
            raw_labels.len()
        )));
    }
    let dim = rows * cols;
    let x = (0..n)
        .map(|i| {
            pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| p as f64 / 255.0)
                .collect()
        })
        .collect();
    let y: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = y.iter().max().map_or(1, |&m| m + 1);
    Ok(Dataset { x, y, classes })
}

/// Write a dataset of square images as an IDX pair; pixels re-quantized to u8.
pub fn save_pair(data: &Dataset, images: &Path, labels: &Path) -> io::Result<()> {
    let dim = data.x.first().map_or(0, |v| v.len());
    let side = (dim as f64).sqrt() as usize;
    assert_eq!(side * side, dim, "images must be square");
    let mut pixels = Vec::with_capacity(data.len() * dim);
    for img in &data.x {
        pixels.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
    }
    write_images(&mut File::create(images)?, side, side, &pixels)?;
    let raw: Vec<u8> = data.y.iter().map(|&y| y as u8).collect();
    write_labels(&mut File::create(labels)?, &raw)
}
