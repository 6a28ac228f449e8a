//! IDX image/label files: big-endian u32 magic and dimensions followed by unsigned bytes.

use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdxOptions {
    /// Reject bytes after the payload instead of warning about them.
    pub strict: bool,
}

struct IdxFile<'a> {
    dims: Vec<usize>,
    payload: &'a [u8],
    trailing: usize,
}

fn parse<'a>(bytes: &'a [u8], expected_magic: u32, what: &str) -> Result<IdxFile<'a>> {
    if bytes.is_empty() {
        return Err(Error::Format(format!("{what} file is empty")));
    }
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "{what} file truncated inside the magic number"
        )));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )));
    }
    let rank = (expected_magic & 0xff) as usize;
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(Error::Format(format!(
            "{what} header truncated: {} bytes, need {header_len}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("{what} dimensions {dims:?} overflow")))?;
    let body = &bytes[header_len..];
    if body.len() < len {
        return Err(Error::Format(format!(
            "{what} payload truncated: {} bytes, dimensions {dims:?} need {len}",
            body.len()
        )));
    }
    Ok(IdxFile {
        dims,
        payload: &body[..len],
        trailing: body.len() - len,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an image/label pair already in memory; pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], opts: IdxOptions) -> Result<Dataset> {
    let img = parse(images, IMAGES_MAGIC, "images")?;
    let lab = parse(labels, LABELS_MAGIC, "labels")?;
    let mut warnings = Vec::new();
    for (f, what) in [(&img, "images"), (&lab, "labels")] {
        if f.trailing > 0 {
            let msg = format!(
                "{what} file has {} trailing bytes after the payload",
                f.trailing
            );
            if opts.strict {
                return Err(Error::Format(msg));
            }
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let (count, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != count {
        return Err(Error::Data(format!(
            "images file holds {count} images but labels file holds {} labels",
            lab.dims[0]
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "images have zero extent {rows}x{cols}"
        )));
    }
    let pixels = rows * cols;
    let inputs = if count == 0 {
        Vec::new()
    } else {
        img.payload
            .chunks_exact(pixels)
            .map(|c| {
                Tensor::new(
                    vec![1, rows, cols],
                    c.iter().map(|&b| f64::from(b) / 255.0).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?
    };
    let labels: Vec<usize> = lab.payload.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    let mut data = Dataset::new("idx", vec![1, rows, cols], num_classes, inputs, labels)?;
    data.warnings = warnings;
    Ok(data)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, opts: IdxOptions) -> Result<Dataset> {
    let data = parse_idx(&read(images_path)?, &read(labels_path)?, opts)?;
    Ok(data.with_provenance(format!(
        "idx:{}+{}",
        images_path.display(),
        labels_path.display()
    )))
}

/// Encodes `count` images of `rows x cols` bytes as an IDX images file.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
