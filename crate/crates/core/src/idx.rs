//! Reader for the IDX image/label file pair (MNIST-family datasets).

use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            detail: "file truncated inside header".into(),
        })
}

/// Parses IDX buffers. Pixels are scaled to `[0, 1]`; `limit` caps the sample count.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    class_count: usize,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let magic = read_u32(images, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let magic = read_u32(labels, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let label_count = read_u32(labels, 4)? as usize;
    if count != label_count {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{count} images but {label_count} labels"),
        });
    }
    let n = limit.map_or(count, |l| l.min(count));
    let dim = rows * cols;
    let pixels_end = 16 + n * dim;
    if images.len() < pixels_end {
        return Err(Error::Format {
            offset: images.len(),
            detail: format!("image data truncated, expected {pixels_end} bytes"),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Format {
            offset: labels.len(),
            detail: format!("label data truncated, expected {} bytes", 8 + n),
        });
    }
    let data: Vec<f64> = images[16..pixels_end]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let ys: Vec<usize> = labels[8..8 + n].iter().map(|&y| usize::from(y)).collect();
    if let Some(pos) = ys.iter().position(|&y| y >= class_count) {
        return Err(Error::Format {
            offset: 8 + pos,
            detail: format!("label {} outside [0, {class_count})", ys[pos]),
        });
    }
    LabeledDataset::new(Matrix::from_vec(n, dim, data)?, ys, class_count)
}

pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    class_count: usize,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, class_count, limit)
}

#[cfg(test)]
pub(crate) fn encode_idx(
    images: &[Vec<u8>],
    rows: u32,
    cols: u32,
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
