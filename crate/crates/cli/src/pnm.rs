//! Binary PNM I/O: P6 (PPM) for RGB images, P5 (PGM) for class-id
//! masks. Maxval is fixed at 255 and round trips are bit-exact.

use std::path::Path;

use pmsdiff_core::metrics::Mask;
use pmsdiff_core::Tensor;

use crate::error::{CliError, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("number out of range"))
    }

    fn payload(&mut self, expected: usize) -> Result<&'a [u8]> {
        // Exactly one whitespace byte separates maxval from the payload.
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err("expected whitespace before payload"));
        }
        self.pos += 1;
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected {
            self.pos = self.bytes.len();
            return Err(self.err(format!(
                "truncated payload: expected {expected} bytes, found {}",
                rest.len()
            )));
        }
        Ok(&rest[..expected])
    }
}

fn parse_header<'a>(cursor: &mut Cursor<'a>, magic: &[u8]) -> Result<(usize, usize)> {
    if cursor.bytes.len() < 2 || &cursor.bytes[..2] != magic {
        return Err(cursor.err(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    cursor.pos = 2;
    let width = cursor.read_number()?;
    let height = cursor.read_number()?;
    let maxval = cursor.read_number()?;
    if maxval != 255 {
        return Err(cursor.err(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(cursor.err("zero image extent"));
    }
    Ok((width, height))
}

/// Read a binary P6 image as a 3×H×W tensor with values k/255.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0, path };
    let (width, height) = parse_header(&mut cursor, b"P6")?;
    let payload = cursor.payload(width * height * 3)?;
    let mut data = vec![0.0; 3 * height * width];
    for (i, px) in payload.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * height * width + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(vec![3, height, width], data)?)
}

/// Write a 3×H×W tensor in [0,1] as binary P6.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(CliError::Data(format!(
            "ppm wants a 3×H×W tensor, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            let v = image.data()[c * plane + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Read a binary P5 mask of class ids.
pub fn read_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0, path };
    let (width, height) = parse_header(&mut cursor, b"P5")?;
    let payload = cursor.payload(width * height)?;
    Ok(Mask::new(height, width, payload.to_vec())?)
}

/// Write a class-id mask as binary P5.
pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.ids());
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Keep the dir alive by leaking it; test files are tiny.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let mask = Mask::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let path = tmp("m.pgm");
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, mask);
        // And the bytes themselves survive a read-write cycle.
        let bytes = std::fs::read(&path).unwrap();
        write_pgm(&path, &back).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn pgm_format_definition() {
        let path = tmp("two.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x00\x01\x02\x03").unwrap();
        let mask = read_pgm(&path).unwrap();
        assert_eq!(mask.get(0, 0), 0);
        assert_eq!(mask.get(0, 1), 1);
        assert_eq!(mask.get(1, 0), 2);
        assert_eq!(mask.get(1, 1), 3);
    }

    #[test]
    fn ppm_format_definition() {
        let path = tmp("img.ppm");
        std::fs::write(&path, b"P6\n2 1\n255\n\x00\x7f\xff\x01\x02\x03").unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2]);
        assert_eq!(img.at(&[0, 0, 0]), 0.0);
        assert_eq!(img.at(&[1, 0, 0]), 127.0 / 255.0);
        assert_eq!(img.at(&[2, 0, 1]), 3.0 / 255.0);
    }

    #[test]
    fn ppm_round_trip_of_quantized_values() {
        let data: Vec<f64> = (0..3 * 4 * 4).map(|i| (i % 256) as f64 / 255.0).collect();
        let img = Tensor::from_vec(vec![3, 4, 4], data).unwrap();
        let path = tmp("q.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn malformed_inputs_report_byte_offsets() {
        let path = tmp("bad.pgm");

        std::fs::write(&path, b"P5\n2 2\n255\n\x00\x01").unwrap();
        match read_pgm(&path) {
            Err(CliError::Parse { offset, message, .. }) => {
                assert!(message.contains("truncated"), "{message}");
                assert!(offset > 0);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        std::fs::write(&path, b"P5\n2 x\n255\n\x00\x01\x02\x03").unwrap();
        match read_pgm(&path) {
            Err(CliError::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, b"P9\n1 1\n255\n\x00").unwrap();
        assert!(matches!(read_pgm(&path), Err(CliError::Parse { offset: 0, .. })));
    }

    #[test]
    fn comments_in_headers_are_skipped() {
        let path = tmp("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1 # inline\n255\n\x05\x06").unwrap();
        let mask = read_pgm(&path).unwrap();
        assert_eq!(mask.ids(), &[5, 6]);
    }
}
