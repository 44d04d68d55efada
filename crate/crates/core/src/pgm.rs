//! PGM (portable graymap) images, ASCII `P2` and binary `P5`, 8 or 16 bit.
//!
//! Pixels are scaled to `[0, 1]` by dividing by the file's maxval.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

struct Header<'a> {
    magic: &'a [u8],
    width: usize,
    height: usize,
    maxval: u32,
    rest: &'a [u8],
}

fn header(bytes: &[u8]) -> Result<Header<'_>> {
    let mut pos = 0;
    let mut fields: Vec<&[u8]> = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PGM header ends early".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    let num = |f: &[u8], what: &str| -> Result<u32> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("PGM {what} `{}` is not a number", String::from_utf8_lossy(f))))
    };
    let (width, height, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from binary data
    Ok(Header { magic: fields[0], width: width as usize, height: height as usize, maxval, rest: &bytes[(pos + 1).min(bytes.len())..] })
}

/// Decodes a PGM into a `[height, width]` tensor with values in `[0, 1]`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = header(bytes)?;
    let n = h.width * h.height;
    let raw: Vec<u32> = match h.magic {
        b"P5" => {
            let wide = h.maxval > 255;
            let need = if wide { 2 * n } else { n };
            if h.rest.len() < need {
                return Err(Error::Truncated { what: "PGM raster".into(), expected: need, found: h.rest.len() });
            }
            if wide {
                h.rest[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as u32).collect()
            } else {
                h.rest[..n].iter().map(|&b| b as u32).collect()
            }
        }
        b"P2" => {
            let text = std::str::from_utf8(h.rest).map_err(|_| Error::Format("P2 raster is not ASCII".into()))?;
            let vals = text
                .split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|_| Error::Format(format!("bad P2 sample `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < n {
                return Err(Error::Truncated { what: "PGM raster".into(), expected: n, found: vals.len() });
            }
            vals[..n].to_vec()
        }
        m => return Err(Error::Format(format!("unsupported PGM magic `{}`", String::from_utf8_lossy(m)))),
    };
    if let Some(v) = raw.iter().find(|&&v| v > h.maxval) {
        return Err(Error::Format(format!("PGM sample {v} exceeds maxval {}", h.maxval)));
    }
    Tensor::new(vec![h.height, h.width], raw.into_iter().map(|v| T::of(v as f64 / h.maxval as f64)).collect())
}

/// Encodes a 2-D tensor, clamping to `[0, 1]` and quantizing to `maxval`.
pub fn encode<T: Scalar>(img: &Tensor<T>, maxval: u16, encoding: PgmEncoding) -> Result<Vec<u8>> {
    if img.ndim() != 2 {
        return Err(crate::error::shape_err!("PGM needs a 2-D image, got {:?}", img.shape()));
    }
    if maxval == 0 {
        return Err(Error::Format("PGM maxval must be positive".into()));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let q: Vec<u16> = img.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * maxval as f64).round() as u16).collect();
    let mut out = Vec::new();
    match encoding {
        PgmEncoding::Binary => {
            out.extend_from_slice(format!("P5\n{w} {h}\n{maxval}\n").as_bytes());
            for v in q {
                if maxval > 255 {
                    out.extend_from_slice(&v.to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
        PgmEncoding::Ascii => {
            out.extend_from_slice(format!("P2\n{w} {h}\n{maxval}\n").as_bytes());
            for row in q.chunks(w.max(1)) {
                let line: Vec<String> = row.iter().map(u16::to_string).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>, maxval: u16, encoding: PgmEncoding) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(img, maxval, encoding)?).map_err(|e| Error::io(path, e))
}
