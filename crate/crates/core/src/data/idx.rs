//! IDX container: big-endian magic `0x0000_08_0D` (type byte, dimension
//! count), one big-endian `u32` per dimension, then raw unsigned bytes.
//! Gzip streams are decompressed transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const UNSIGNED_BYTE: u8 = 0x08;

fn decompress(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1F, 0x8B]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or(Error::IdxTruncated {
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
}

/// Images become `N×1×H×W` scaled to `[0, 1]`; labels become a rank-1
/// tensor of raw byte values.
pub fn idx_parse(bytes: &[u8]) -> Result<Tensor> {
    let bytes = decompress(bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IMAGES_MAGIC && magic != LABELS_MAGIC {
        let type_byte = (magic >> 8) as u8;
        if magic >> 16 == 0 && type_byte != UNSIGNED_BYTE && matches!(magic & 0xFF, 1 | 3) {
            return Err(Error::IdxType(type_byte));
        }
        return Err(Error::IdxMagic(magic));
    }
    let rank = (magic & 0xFF) as usize;
    let dims = (0..rank)
        .map(|i| read_u32(&bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let count: usize = dims.iter().product();
    let payload = bytes.get(header..header + count).ok_or(Error::IdxTruncated {
        needed: header + count,
        available: bytes.len(),
    })?;
    if magic == IMAGES_MAGIC {
        let shape = [dims[0], 1, dims[1], dims[2]];
        Tensor::new(&shape, payload.iter().map(|&b| f64::from(b) / 255.0).collect())
    } else {
        Tensor::new(&dims, payload.iter().map(|&b| f64::from(b)).collect())
    }
}

/// Parse a label file into class ids.
pub fn idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let bytes = decompress(bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxMagic(magic));
    }
    Ok(idx_parse(&bytes)?.data().iter().map(|&v| v as usize).collect())
}

fn header(magic: u32, dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(dims, "dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    Ok(out)
}

/// Inverse of [`idx_parse`] for `N×1×H×W` images with values `b/255`.
pub fn idx_serialize_images(images: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = images.dims4()?;
    if c != 1 {
        return Err(Error::shape(images.shape(), "idx images have a single channel"));
    }
    let mut out = header(IMAGES_MAGIC, &[n, h, w])?;
    for &v in images.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidConfig(format!("pixel {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn idx_serialize_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = header(LABELS_MAGIC, &[labels.len()])?;
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?);
    }
    Ok(out)
}

fn read_first(dir: &Path, stems: &[&str]) -> Result<Vec<u8>> {
    for stem in stems {
        for name in [stem.to_string(), format!("{stem}.gz")] {
            let path = dir.join(&name);
            if path.exists() {
                return Ok(std::fs::read(path)?);
            }
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("none of {stems:?} (optionally .gz) found in {}", dir.display()),
    )))
}

fn load_split(dir: &Path, images: &[&str], labels: &[&str]) -> Result<(Tensor, Vec<usize>)> {
    let x = idx_parse(&read_first(dir, images)?)?;
    let y = idx_labels(&read_first(dir, labels)?)?;
    if x.rank() != 4 {
        return Err(Error::shape(x.shape(), "expected an idx image file"));
    }
    Ok((x, y))
}

/// Load the four MNIST-style files (`train-images-idx3-ubyte`,
/// `train-labels-idx1-ubyte`, `t10k-…`, optionally gzipped) from `dir`.
/// The class count is one more than the largest label seen.
pub fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (xtr, ytr) = load_split(
        dir,
        &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
        &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    )?;
    let (xte, yte) = load_split(
        dir,
        &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte", "test-images-idx3-ubyte"],
        &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte", "test-labels-idx1-ubyte"],
    )?;
    if xtr.shape()[1..] != xte.shape()[1..] {
        return Err(Error::mismatch(&xtr.shape()[1..], &xte.shape()[1..]));
    }
    let classes = ytr.iter().chain(&yte).max().map_or(1, |m| m + 1);
    Ok((
        Dataset::new(xtr, ytr, None, classes)?,
        Dataset::new(xte, yte, None, classes)?,
    ))
}
