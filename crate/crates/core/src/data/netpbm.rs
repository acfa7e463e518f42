//! Binary Netpbm images: P5 (graymap) and P6 (pixmap), 8-bit samples.
//!
//! Header grammar: magic, whitespace, width, whitespace, height, whitespace,
//! maxval, exactly one whitespace byte, raster. `#` starts a comment that
//! runs to the end of the line and may appear anywhere before maxval ends.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} graymap needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, raster) = parse_header(bytes, b"P5")?;
        let pixels = read_raster(raster, header, 1)?;
        Self::new(header.width, header.height, pixels)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} pixmap needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, raster) = parse_header(bytes, b"P6")?;
        let pixels = read_raster(raster, header, 3)?;
        Self::new(header.width, header.height, pixels)
    }
}

#[derive(Clone, Copy, Debug)]
struct Header {
    width: usize,
    height: usize,
    maxval: u32,
}

fn parse_header<'b>(bytes: &'b [u8], magic: &[u8; 2]) -> Result<(Header, &'b [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Load(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // at least one whitespace (or comment) before every field
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        if pos == start {
            return Err(Error::Load(format!("missing whitespace before {name}")));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            return Err(Error::Load(format!("missing {name} in header")));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        fields[k] = text
            .parse()
            .map_err(|_| Error::Load(format!("{name} `{text}` out of range")))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Load("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Load(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Load(format!("unsupported maxval {maxval}")));
    }
    Ok((
        Header {
            width: width as usize,
            height: height as usize,
            maxval,
        },
        &bytes[pos..],
    ))
}

fn read_raster(raster: &[u8], h: Header, channels: usize) -> Result<Vec<u8>> {
    let need = h.width * h.height * channels;
    if raster.len() < need {
        return Err(Error::Load(format!(
            "raster truncated: {} of {need} bytes",
            raster.len()
        )));
    }
    let data = &raster[..need];
    if h.maxval == 255 {
        return Ok(data.to_vec());
    }
    data.iter()
        .map(|&v| {
            if u32::from(v) > h.maxval {
                Err(Error::Load(format!("sample {v} exceeds maxval {}", h.maxval)))
            } else {
                Ok(((u32::from(v) * 255 + h.maxval / 2) / h.maxval) as u8)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_and_header_bytes() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(GrayImage::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage::new(2, 1, vec![128, 0, 0, 255, 255, 0]).unwrap();
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        let back = RgbImage::decode(&bytes).unwrap();
        assert_eq!(back.pixel(1, 0), [255, 255, 0]);
    }

    #[test]
    fn comments_and_odd_whitespace() {
        let mut bytes = b"P5 # made by hand\n2\t# w\n 1\n255 ".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = GrayImage::decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.pixels.clone()), (2, 1, vec![7, 9]));
    }

    #[test]
    fn low_maxval_rescaled() {
        let mut bytes = b"P5\n2 1\n1\n".to_vec();
        bytes.extend_from_slice(&[0, 1]);
        assert_eq!(GrayImage::decode(&bytes).unwrap().pixels, vec![0, 255]);
    }

    #[test]
    fn malformed_headers_rejected() {
        assert!(GrayImage::decode(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(GrayImage::decode(b"P5\n1\n255\n\0").is_err());
        assert!(GrayImage::decode(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(GrayImage::decode(b"P5\n2 2\n255\n\0").is_err());
        assert!(GrayImage::decode(b"P5\n0 2\n255\n").is_err());
    }
}
