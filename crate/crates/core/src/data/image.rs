//! Binary netpbm (P6 colour, P5 grey, maxval 255) and raw SOTN tensors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{decode_tensor, Tensor};

/// Reads an image file into a `[3, H, W]` tensor of raw 0..=255 values.
/// SOTN files are returned as stored (grey tensors are replicated).
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| e.in_file(path))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    match bytes.get(..2) {
        Some(b"P6") => decode_pnm(bytes, 3),
        Some(b"P5") => decode_pnm(bytes, 1),
        Some(b"SO") => {
            let (t, _) = decode_tensor(bytes)?;
            match *t.shape() {
                [3, _, _] => Ok(t),
                [1, h, w] | [h, w] => Ok(replicate(t.data(), h, w)),
                _ => Err(Error::parse(7, format!("tensor image must be [3,H,W] or [H,W], got {:?}", t.shape()))),
            }
        }
        _ => Err(Error::parse(0, "unknown image magic (expected P6, P5 or SOTN)")),
    }
}

fn replicate(grey: &[f64], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(3 * grey.len());
    for _ in 0..3 {
        data.extend_from_slice(grey);
    }
    Tensor::from_parts(vec![3, h, w], data)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Tensor> {
    let mut r = HeaderReader { bytes, pos: 2 };
    let w = r.number("width")?;
    let h = r.number("height")?;
    r.skip_space_and_comments();
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::parse(3, "zero image extent"));
    }
    if !bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(r.pos, "missing whitespace before raster"));
    }
    let start = r.pos + 1;
    let need = w * h * channels;
    let raster = &bytes[start.min(bytes.len())..];
    if raster.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated raster: need {need} bytes, have {}", raster.len()),
        ));
    }
    let plane = w * h;
    if channels == 1 {
        let grey: Vec<f64> = raster[..need].iter().map(|&b| b as f64).collect();
        return Ok(replicate(&grey, h, w));
    }
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in raster[..need].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f64;
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encodes a `[3, H, W]` tensor of 0..=255 values as binary PPM.
pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let [3, h, w] = *t.shape() else {
        return Err(Error::Dimension(format!("PPM needs [3, H, W], got {:?}", t.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for c in 0..3 {
            out.push(to_byte(t.data()[c * plane + p]));
        }
    }
    Ok(out)
}

/// Encodes a `[H, W]` tensor of 0..=255 values as binary PGM.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = *t.shape() else {
        return Err(Error::Dimension(format!("PGM needs [H, W], got {:?}", t.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{encode_tensor, Dtype};

    #[test]
    fn single_pixel_ppm() {
        let t = decode_image(b"P6\n1 1\n255\n\xff\x00\x80").unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[255.0, 0.0, 128.0]);
    }

    #[test]
    fn grey_is_replicated() {
        let t = decode_image(b"P5 # comment\n2 1 255\n\x07\x09").unwrap();
        assert_eq!(t.data(), &[7.0, 9.0, 7.0, 9.0, 7.0, 9.0]);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match decode_image(b"P6\n1 1\n65535\n\x00\x00") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 7);
                assert!(message.contains("maxval"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_image(b"P6\n2 2\n255\n\x00"), Err(Error::Parse { offset: 12, .. })));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn ppm_and_sotn_round_trip() {
        let t = Tensor::new(vec![3, 2, 2], (0..12).map(|v| (v * 20) as f64).collect()).unwrap();
        assert_eq!(decode_image(&encode_ppm(&t).unwrap()).unwrap(), t);
        let back = decode_image(&encode_tensor(&t, Dtype::F64)).unwrap();
        assert_eq!(back, t);
        let g = Tensor::new(vec![1, 2], vec![3.0, 250.0]).unwrap();
        assert_eq!(decode_image(&encode_pgm(&g).unwrap()).unwrap().channel(2), &[3.0, 250.0]);
    }
}
