//! IDX files (the MNIST family format), raw or gzip-compressed.
//!
//! Images are `0x00000803` (unsigned bytes, `[n, h, w]`), `0x00000804`
//! (`[n, c, h, w]`) or the float32 variants `0x00000D03` / `0x00000D04`;
//! labels are `0x00000801`. Byte pixels are scaled to `[0, 1]`.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;
const FLOAT: u8 = 0x0D;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdxPixels {
    /// Quantized to `round(255 · clamp(v, 0, 1))`.
    Ubyte,
    /// Exact 32-bit floats, for data outside `[0, 1]`.
    Float32,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], what: &str) -> Result<(u8, Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { what: format!("{what} header"), expected: 4, found: bytes.len() });
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (ty, nd) = (bytes[2], bytes[3] as usize);
    if bytes[0] != 0 || bytes[1] != 0 || nd == 0 {
        return Err(Error::BadMagic { what: what.into(), found: magic });
    }
    let head = 4 + 4 * nd;
    if bytes.len() < head {
        return Err(Error::Truncated { what: format!("{what} header"), expected: head, found: bytes.len() });
    }
    let dims = (0..nd).map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize).collect();
    Ok((ty, dims, head))
}

/// Decodes an image file body into `[n, c, h, w]`.
pub fn decode_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (ty, dims, head) = header(bytes, "image file")?;
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let shape = match (ty, dims.len()) {
        (UBYTE | FLOAT, 3) => vec![dims[0], 1, dims[1], dims[2]],
        (UBYTE | FLOAT, 4) => dims.clone(),
        _ => return Err(Error::BadMagic { what: "image file".into(), found: magic }),
    };
    let count: usize = shape.iter().product();
    let width = if ty == UBYTE { 1 } else { 4 };
    let body = &bytes[head..];
    if body.len() < count * width {
        return Err(Error::Truncated { what: "image data".into(), expected: count * width, found: body.len() });
    }
    let data = if ty == UBYTE {
        body[..count].iter().map(|&b| T::of(b as f64 / 255.0)).collect()
    } else {
        body[..count * 4].chunks_exact(4).map(|c| T::of(f32::from_be_bytes(c.try_into().unwrap()) as f64)).collect()
    };
    Tensor::new(shape, data)
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (ty, dims, head) = header(bytes, "label file")?;
    if ty != UBYTE || dims.len() != 1 {
        return Err(Error::BadMagic { what: "label file".into(), found: u32::from_be_bytes(bytes[..4].try_into().unwrap()) });
    }
    let body = &bytes[head..];
    if body.len() < dims[0] {
        return Err(Error::Truncated { what: "label data".into(), expected: dims[0], found: body.len() });
    }
    Ok(body[..dims[0]].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. Class names default to the Fashion-MNIST
/// names when there are ten classes, otherwise to the label numbers.
pub fn load_idx<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledSet<T>> {
    let imgs = decode_idx_images::<T>(&read_maybe_gz(images.as_ref())?)?;
    let labs = decode_idx_labels(&read_maybe_gz(labels.as_ref())?)?;
    if imgs.shape()[0] != labs.len() {
        return Err(Error::CountMismatch { images: imgs.shape()[0], labels: labs.len() });
    }
    let k = labs.iter().max().map_or(0, |m| m + 1);
    let names = if k == 10 {
        super::FASHION_CLASSES[..10].iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| i.to_string()).collect()
    };
    LabeledSet::new(imgs, labs, names)
}

fn encode_images<T: Scalar>(images: &Tensor<T>, pixels: IdxPixels) -> Vec<u8> {
    let s = images.shape();
    let dims: Vec<usize> = if s[1] == 1 { vec![s[0], s[2], s[3]] } else { s.to_vec() };
    let ty = if pixels == IdxPixels::Ubyte { UBYTE } else { FLOAT };
    let mut out = vec![0, 0, ty, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match pixels {
        IdxPixels::Ubyte => out.extend(images.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)),
        IdxPixels::Float32 => {
            for v in images.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_be_bytes());
            }
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let body = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish()).map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes a set as an IDX pair; paths ending in `.gz` are compressed.
pub fn write_idx<T: Scalar>(set: &LabeledSet<T>, images: impl AsRef<Path>, labels: impl AsRef<Path>, pixels: IdxPixels) -> Result<()> {
    if set.num_classes() > 256 {
        return Err(Error::Format("IDX labels are single bytes".into()));
    }
    write_file(images.as_ref(), &encode_images(&set.images, pixels))?;
    let mut lab = vec![0, 0, UBYTE, 1];
    lab.extend_from_slice(&(set.len() as u32).to_be_bytes());
    lab.extend(set.labels.iter().map(|&l| l as u8));
    write_file(labels.as_ref(), &lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend([0, 51, 102, 153, 204, 255, 1, 2, 3, 4, 5, 6]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn decodes_fixture_bytes() {
        let (img, lab) = fixture();
        let t: Tensor<f64> = decode_idx_images(&img).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 3]);
        for (v, b) in t.data().iter().zip(&img[16..]) {
            assert_eq!(*v, *b as f64 / 255.0);
        }
        assert_eq!(decode_idx_labels(&lab).unwrap(), vec![7, 3]);
    }

    #[test]
    fn distinct_errors() {
        let (mut img, lab) = fixture();
        assert!(matches!(decode_idx_labels(&img), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_idx_images::<f32>(&lab), Err(Error::BadMagic { .. })));
        img.truncate(20);
        assert!(matches!(decode_idx_images::<f32>(&img), Err(Error::Truncated { .. })));
        assert!(matches!(decode_idx_images::<f32>(&[0, 0]), Err(Error::Truncated { .. })));
    }
}
