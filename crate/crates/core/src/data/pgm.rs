//! Binary netpbm decoding and encoding.
//!
//! Binary PGM (`P5`, maxval 255) is the canonical on-disk frame format.
//! Binary PPM (`P6`) is accepted as a colour adapter and converted to gray
//! with luma weights before anything else sees it.

use crate::error::{Error, Result};

/// Grayscale image with pixels in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Contract(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }
}

/// ITU-R BT.601 luma.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// 8-bit quantization used when writing frames.
pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::parse("byte 0", "truncated header: missing magic"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(Error::parse(
            "byte 0",
            format!("bad magic {:?}, expected \"P5\"", String::from_utf8_lossy(&magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if k == 0 && pos == 2 {
            return Err(Error::parse(format!("byte {pos}"), "expected whitespace after magic"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(format!("byte {pos}"), format!("expected {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[k] = text
            .parse()
            .map_err(|_| Error::parse(format!("byte {start}"), format!("{name} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::parse(
            format!("byte {pos}"),
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(format!("byte {pos}"), "expected single whitespace before raster")),
    }
    Ok(Header {
        magic,
        width,
        height,
        data_offset: pos,
    })
}

/// Decodes a binary PGM; each pixel is `byte / 255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(Error::parse("byte 0", "bad magic \"P6\", expected \"P5\""));
    }
    decode_raster(bytes, header)
}

/// Decodes PGM directly or PPM through luma conversion.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_header(bytes)?;
    decode_raster(bytes, header)
}

fn decode_raster(bytes: &[u8], header: Header) -> Result<GrayImage> {
    let channels = if &header.magic == b"P6" { 3 } else { 1 };
    let n = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::parse("header", "image dimensions overflow"))?;
    let data = &bytes[header.data_offset..];
    if data.len() < n {
        return Err(Error::parse(
            format!("byte {}", header.data_offset + data.len()),
            format!("truncated raster: expected {n} bytes, found {}", data.len()),
        ));
    }
    let pixels = if channels == 1 {
        data[..n].iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        data[..n]
            .chunks_exact(3)
            .map(|c| {
                let v = luma(c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0);
                v.clamp(0.0, 1.0)
            })
            .collect()
    };
    GrayImage::new(header.width, header.height, pixels)
}

/// Encodes pixels in [0, 1] as binary PGM, rounding to 8 bits.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| quantize(p)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_black_and_white_pixels() {
        let mut b = b"P5 1 1 255 ".to_vec();
        b.push(0x00);
        assert_eq!(decode_pgm(&b).unwrap().pixels, vec![0.0]);
        let mut w = b"P5 1 1 255 ".to_vec();
        w.push(0xFF);
        assert_eq!(decode_pgm(&w).unwrap().pixels, vec![1.0]);
    }

    #[test]
    fn three_by_two_fixture() {
        let mut b = b"P5\n3 2\n255\n".to_vec();
        b.extend([0u8, 1, 2, 3, 4, 5]);
        let img = decode_pgm(&b).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        let table = [0.0, 1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0, 5.0 / 255.0];
        assert_eq!(img.pixels, table.to_vec());
    }

    #[test]
    fn comments_in_header() {
        let mut b = b"P5\n# made by hand\n2 1\n# max\n255\n".to_vec();
        b.extend([10u8, 20]);
        let img = decode_pgm(&b).unwrap();
        assert_eq!(img.pixels.len(), 2);
    }

    #[test]
    fn errors_name_offsets() {
        let err = decode_pgm(b"P2 1 1 255 \x00").unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");

        let err = decode_pgm(b"P5 1 1 65535 \x00\x00").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");

        let err = decode_pgm(b"P5 2 2 255 \x00\x01").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains("byte 13"), "{msg}");
    }

    #[test]
    fn ppm_is_converted_by_luma() {
        let mut b = b"P6 1 1 255 ".to_vec();
        b.extend([255u8, 0, 0]);
        assert!(decode_pgm(&b).is_err());
        let img = decode_image(&b).unwrap();
        assert!((img.pixels[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip_for_quantized_pixels() {
        let px: Vec<f64> = (0..=255u8).map(|b| b as f64 / 255.0).collect();
        let bytes = encode_pgm(16, 16, &px);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels, px);
    }
}
