use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Images flattened row-major to `n × (rows·cols)`, pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub source: String,
    pub rows: usize,
    pub cols: usize,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }
}

/// Parses the header and returns `(dims, payload)`.
fn parse<'a>(path: &Path, bytes: &'a [u8], magic: u32) -> Result<(Vec<u32>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: 4,
            actual: bytes.len() as u64,
        });
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::IdxBadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: header as u64,
            actual: bytes.len() as u64,
        });
    }
    let dims: Vec<u32> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let overflow = || Error::IdxDimensionOverflow {
        path: path.to_path_buf(),
        dims: dims.clone(),
    };
    let payload = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
        .filter(|&n| n <= isize::MAX as u64)
        .ok_or_else(overflow)?;
    if payload == 0 {
        return Err(Error::Dimension(format!(
            "IDX file {} has an empty dimension {dims:?}",
            path.display()
        )));
    }
    let expected = header as u64 + payload;
    if (bytes.len() as u64) < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok((dims, &bytes[header..expected as usize]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an unsigned-byte image file (`0x00000803`) and scales pixels by 1/255.
pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let (dims, payload) = parse(path, &bytes, MAGIC_IMAGES)?;
    let (n, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(ImageDataset {
        images: Tensor::matrix(n, rows * cols, data)?,
        labels: None,
        source: path.display().to_string(),
        rows,
        cols,
    })
}

/// Reads an unsigned-byte label file (`0x00000801`).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let (_, payload) = parse(path, &bytes, MAGIC_LABELS)?;
    Ok(payload.to_vec())
}

fn write(path: &Path, magic: u32, dims: &[u32], payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `n` images of `rows × cols` bytes.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    let per = rows * cols;
    if per == 0 || pixels.len() % per != 0 {
        return Err(Error::Dimension(format!(
            "{} pixels do not form {rows}x{cols} images",
            pixels.len()
        )));
    }
    let dims = [(pixels.len() / per) as u32, rows as u32, cols as u32];
    write(path.as_ref(), MAGIC_IMAGES, &dims, pixels)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    write(path.as_ref(), MAGIC_LABELS, &[labels.len() as u32], labels)
}
