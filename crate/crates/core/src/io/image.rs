//! Binary netpbm images: P6 (RGB) input and P5 (grayscale) output, both with
//! maxval 255.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

/// Parses the whitespace/comment-separated header tokens and returns them
/// with the payload offset (one whitespace byte after maxval).
fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<([usize; 3], &'a [u8])> {
    if bytes.len() < 2 {
        return Err(FormatError::Truncated("image header".into()).into());
    }
    if &bytes[..2] != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        }
        .into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(FormatError::Truncated("image header".into()).into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Header(format!("expected a number at byte {start}")).into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits")
            .parse()
            .map_err(|_| FormatError::Header(format!("number too large at byte {start}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(FormatError::Header("missing whitespace after maxval".into()).into()),
        None => return Err(FormatError::Truncated("image header".into()).into()),
    }
    if fields[2] != 255 {
        return Err(FormatError::Header(format!("maxval must be 255, got {}", fields[2])).into());
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err(FormatError::Header("zero image extent".into()).into());
    }
    Ok((fields, &bytes[pos..]))
}

/// Decodes a P6 image into `(1, 3, H, W)` with values `byte / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let ([w, h, _], payload) = parse_header(bytes, b"P6")?;
    if payload.len() < 3 * w * h {
        return Err(FormatError::Truncated(format!(
            "P6 payload has {} bytes, {w}x{h} needs {}",
            payload.len(),
            3 * w * h
        ))
        .into());
    }
    Ok(Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        payload[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes sample 0 of a 3-channel `[0, 1]` tensor as P6.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [_, c, h, w] = image.dims();
    if c != 3 {
        return Err(Error::shape("encode_ppm", "channels", format!("need 3, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(quantize(image.at(0, ch, y, x)));
            }
        }
    }
    Ok(out)
}

/// Rounds an image to what a P6 round-trip would return.
pub fn quantize_image(image: &Tensor) -> Tensor {
    image.map(|v| quantize(v) as f32 / 255.0)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_ppm(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::from(e).in_file(path))
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let ([width, height, _], payload) = parse_header(bytes, b"P5")?;
    if payload.len() < width * height {
        return Err(FormatError::Truncated(format!(
            "P5 payload has {} bytes, {width}x{height} needs {}",
            payload.len(),
            width * height
        ))
        .into());
    }
    Ok(GrayImage {
        width,
        height,
        pixels: payload[..width * height].to_vec(),
    })
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_pgm(&bytes).map_err(|e| e.in_file(path))
}
