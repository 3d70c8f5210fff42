//! Minimal portable-anymap codec: P5/P6 (binary) required, P2/P3 (ASCII)
//! accepted. 8-bit maxval only; headers may contain `#` comments.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Decoded image, channel-major RGB (`[3, height, width]` u8). Grayscale
/// sources are replicated across the three channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        RawImage { width, height, data }
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

pub fn read_pnm(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parse a PNM byte buffer. Errors are plain strings; callers attach paths.
pub fn parse_pnm(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let (channels, ascii) = match magic.as_str() {
        "P2" => (1, true),
        "P3" => (3, true),
        "P5" => (1, false),
        "P6" => (3, false),
        other => return Err(format!("unsupported magic {other:?}")),
    };
    let width = cur.int()? as usize;
    let height = cur.int()? as usize;
    let maxval = cur.int()?;
    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (8-bit only)"));
    }
    let n = width * height * channels;
    let raster: Vec<u8> = if ascii {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let x = cur.int()?;
            if x > maxval {
                return Err(format!("sample {x} exceeds maxval {maxval}"));
            }
            v.push(x as u8);
        }
        v
    } else {
        // binary raster starts after exactly one whitespace byte
        cur.expect_single_whitespace()?;
        let rest = &bytes[cur.pos..];
        if rest.len() < n {
            return Err(format!(
                "truncated raster: expected {n} bytes, found {}",
                rest.len()
            ));
        }
        rest[..n].to_vec()
    };
    // interleaved -> channel-major, replicating grayscale
    let mut data = vec![0u8; 3 * width * height];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let src = if channels == 1 {
                    raster[y * width + x]
                } else {
                    raster[(y * width + x) * 3 + c]
                };
                data[(c * height + y) * width + x] = src;
            }
        }
    }
    Ok(RawImage { width, height, data })
}

/// Binary P6 writer.
pub fn write_ppm(path: &Path, img: &RawImage) -> Result<()> {
    let mut out = Vec::with_capacity(img.width * img.height * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("in-memory write");
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.push(img.pixel(c, y, x));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary P5 graymap writer (used for heatmap export).
pub fn write_pgm(path: &Path, gray: &[u8], width: usize, height: usize) -> Result<()> {
    assert_eq!(gray.len(), width * height);
    let mut out = Vec::with_capacity(gray.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(gray);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) -> std::result::Result<(), String> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            return Ok(());
        }
    }

    fn token(&mut self) -> std::result::Result<String, String> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err("unexpected end of header".into());
        }
        String::from_utf8(self.bytes[start..self.pos].to_vec())
            .map_err(|_| "non-ascii header token".to_string())
    }

    fn int(&mut self) -> std::result::Result<u32, String> {
        let tok = self.token()?;
        tok.parse::<u32>()
            .map_err(|_| format!("expected integer in header, got {tok:?}"))
    }

    fn expect_single_whitespace(&mut self) -> std::result::Result<(), String> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err("missing whitespace before binary raster".into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(width: usize, height: usize) -> RawImage {
        let mut data = vec![0u8; 3 * width * height];
        for y in 0..height {
            for x in 0..width {
                let v = if (x + y) % 2 == 0 { 200 } else { 15 };
                for c in 0..3 {
                    data[(c * height + y) * width + x] = v + c as u8;
                }
            }
        }
        RawImage::new(width, height, data)
    }

    #[test]
    fn p6_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = checker(7, 5);
        write_ppm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn p5_replicates_gray_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, &[0, 128, 255, 64], 2, 2).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!(img.pixel(0, 0, 1), 128);
        assert_eq!(img.pixel(1, 0, 1), 128);
        assert_eq!(img.pixel(2, 1, 1), 64);
    }

    #[test]
    fn ascii_p2_with_comments_parses() {
        let src = b"P2\n# comment line\n2 2\n255\n0 10\n# another\n20 30\n";
        let img = parse_pnm(src).unwrap();
        assert_eq!(img.pixel(0, 1, 1), 30);
    }

    #[test]
    fn corrupt_header_is_an_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\n3 bogus\n255\n").unwrap();
        let err = read_pnm(&path).unwrap_err().to_string();
        assert!(err.contains("bad.ppm"), "{err}");
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let err = parse_pnm(b"P6\n4 4\n255\nxx").unwrap_err();
        assert!(err.contains("truncated"), "{err}");
    }
}
