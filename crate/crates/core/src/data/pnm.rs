//! Binary PPM (P6) images and PGM (P5) masks carrying a `#C=<n>` comment.

use std::fs;
use std::path::Path;

use super::{DataError, ImageGrid, LabelGrid};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    comments: Vec<String>,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, DataError> {
    let bad = |m: &str| DataError::Format(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(&format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    let mut comments = Vec::new();
    while fields.len() < 3 {
        match bytes.get(pos) {
            None => return Err(bad("truncated header")),
            Some(b'#') => {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map(|e| pos + e).ok_or_else(|| bad("truncated header"))?;
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                pos = end + 1;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b) if b.is_ascii_digit() => {
                let start = pos;
                while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
                    pos += 1;
                }
                let s = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
                fields.push(s.parse::<usize>().map_err(|_| bad("header number out of range"))?);
            }
            Some(_) => return Err(bad("unexpected byte in header")),
        }
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing separator after maxval")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    Ok(Header { width, height, maxval, comments, data_start: pos })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageGrid, DataError> {
    let h = parse_header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(DataError::Unsupported(format!("PPM maxval {} (only 255 is supported)", h.maxval)));
    }
    let n = h.width * h.height * 3;
    let raster = &bytes[h.data_start..];
    if raster.len() < n {
        return Err(DataError::Format(format!("truncated payload: {} of {n} bytes", raster.len())));
    }
    ImageGrid::new(h.height, h.width, raster[..n].iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn encode_ppm(img: &ImageGrid) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

/// 8-bit quantization used when saving images.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelGrid, DataError> {
    let h = parse_header(bytes, b"P5")?;
    if h.maxval == 0 || h.maxval > 255 {
        return Err(DataError::Unsupported(format!("PGM maxval {} (must be 1..=255)", h.maxval)));
    }
    let classes = h
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("C="))
        .ok_or_else(|| DataError::Format("missing #C=<n> class-count comment".into()))?;
    let num_classes: usize =
        classes.trim().parse().map_err(|_| DataError::Format(format!("bad class count '{classes}'")))?;
    let n = h.width * h.height;
    let raster = &bytes[h.data_start..];
    if raster.len() < n {
        return Err(DataError::Format(format!("truncated payload: {} of {n} bytes", raster.len())));
    }
    LabelGrid::new(h.height, h.width, num_classes, raster[..n].to_vec())
}

pub fn encode_pgm(mask: &LabelGrid) -> Vec<u8> {
    let (h, w) = mask.dims();
    let mut out = format!("P5\n#C={}\n{w} {h}\n255\n", mask.num_classes()).into_bytes();
    out.extend_from_slice(mask.data());
    out
}

pub fn load_image(path: &Path) -> Result<ImageGrid, DataError> {
    decode_ppm(&fs::read(path).map_err(|e| DataError::io(path, e))?).map_err(|e| e.at(path))
}

pub fn save_image(img: &ImageGrid, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_ppm(img)).map_err(|e| DataError::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<LabelGrid, DataError> {
    decode_pgm(&fs::read(path).map_err(|e| DataError::io(path, e))?).map_err(|e| e.at(path))
}

pub fn save_mask(mask: &LabelGrid, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_pgm(mask)).map_err(|e| DataError::io(path, e))
}
