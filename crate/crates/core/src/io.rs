//! File formats: raw tensor container, binary PGM and single-column CSV.
//!
//! Raw container layout (all integers little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `SDT1` |
//! | 4 | 4 | dtype code, u32 (`1` = f32, `2` = f64) |
//! | 8 | 4 | rank `r`, u32 |
//! | 12 | 8·r | dims, u64 each, outermost first |
//! | 12 + 8r | n·size | row-major payload, IEEE-754 little-endian |
//!
//! PGM: binary `P5` with `maxval` < 256 (one byte per pixel) or up to 65535
//! (two bytes, big-endian). Pixels map to `[0, 1]` as `v / maxval`; writing
//! clamps to `[0, 1]` and rounds to the nearest level.

use std::fs;
use std::path::Path;

use crate::denoiser::UNet;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"SDT1";

pub fn encode_raw<S: Scalar>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + t.len() * S::DTYPE.size());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(S::DTYPE as u32).to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn raw_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "raw tensor",
        offset,
        message: message.into(),
    }
}

fn take<'b>(bytes: &'b [u8], offset: usize, n: usize) -> Result<&'b [u8]> {
    bytes
        .get(offset..offset + n)
        .ok_or_else(|| raw_err(offset, format!("truncated: need {n} bytes, {} available", bytes.len().saturating_sub(offset))))
}

/// Decode a raw container, converting the stored dtype to `S` if needed.
pub fn decode_raw<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>> {
    if take(bytes, 0, 4)? != RAW_MAGIC {
        return Err(raw_err(0, "bad magic"));
    }
    let code = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().expect("4 bytes"));
    let dtype = DType::from_code(code).ok_or_else(|| raw_err(4, format!("unknown dtype code {code}")))?;
    let rank = u32::from_le_bytes(take(bytes, 8, 4)?.try_into().expect("4 bytes")) as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + 8 * i;
        shape.push(u64::from_le_bytes(take(bytes, off, 8)?.try_into().expect("8 bytes")) as usize);
    }
    let start = 12 + 8 * rank;
    let count: usize = shape.iter().product();
    let size = dtype.size();
    let payload = take(bytes, start, count * size)?;
    if bytes.len() != start + count * size {
        return Err(raw_err(start + count * size, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(size)
        .map(|c| match dtype {
            DType::F32 => S::lit(f32::read_le(c) as f64),
            DType::F64 => S::lit(f64::read_le(c)),
        })
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_raw<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    fs::write(path, encode_raw(t))?;
    Ok(())
}

pub fn read_raw<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    decode_raw(&fs::read(path)?)
}

fn pgm_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "pgm",
        offset,
        message: message.into(),
    }
}

struct Header<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(pgm_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| pgm_err(start, format!("{what} out of range")))
    }
}

/// Decode a binary PGM into a `[1, H, W]` tensor in `[0, 1]`.
pub fn decode_pgm<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>> {
    if bytes.get(0..2) != Some(b"P5") {
        return Err(pgm_err(0, "missing P5 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(pgm_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(pgm_err(h.pos, "expected a single whitespace byte before the raster"));
    }
    let start = h.pos + 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = width * height * depth;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| pgm_err(start, format!("raster truncated: need {need} bytes")))?;
    let inv = 1.0 / maxval as f64;
    let data = if depth == 1 {
        raster.iter().map(|&v| S::lit(v as f64 * inv)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| S::lit(u16::from_be_bytes([c[0], c[1]]) as f64 * inv))
            .collect()
    };
    Tensor::new(&[1, height, width], data)
}

/// Encode `[H, W]` or `[1, H, W]` as binary PGM with 8 or 16 bits per pixel.
pub fn encode_pgm<S: Scalar>(t: &Tensor<S>, bits: u32) -> Result<Vec<u8>> {
    let (h, w) = match t.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::invalid(format!("pgm needs a single-channel image, got shape {s:?}"))),
    };
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::invalid(format!("pgm bit depth must be 8 or 16, got {bits}"))),
    };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in t.data() {
        let q = (v.f64().clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if bits == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub fn read_pgm<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>, bits: u32) -> Result<()> {
    fs::write(path, encode_pgm(t, bits)?)?;
    Ok(())
}

/// One value per line under a `value` header, shortest round-trip formatting.
pub fn encode_signal_csv<S: Scalar>(t: &Tensor<S>) -> String {
    let mut s = String::from("value\n");
    for v in t.data() {
        s.push_str(&format!("{}\n", v.f64()));
    }
    s
}

/// Read a 1D signal as `[1, N]`. The last comma-separated field of each line
/// is the value; a non-numeric first line is treated as a header.
pub fn decode_signal_csv<S: Scalar>(text: &str) -> Result<Tensor<S>> {
    let mut values = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let field = line.trim().rsplit(',').next().unwrap_or("").trim();
        if !field.is_empty() {
            match field.parse::<f64>() {
                Ok(v) => values.push(S::lit(v)),
                Err(_) if i == 0 => {}
                Err(_) => {
                    return Err(Error::Format {
                        format: "csv",
                        offset,
                        message: format!("line {}: cannot parse {field:?}", i + 1),
                    })
                }
            }
        }
        offset += line.len();
    }
    let n = values.len();
    Tensor::new(&[1, n], values)
}

pub fn read_signal_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    decode_signal_csv(&fs::read_to_string(path)?)
}

pub fn write_signal_csv<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    fs::write(path, encode_signal_csv(t))?;
    Ok(())
}

/// Load a tensor by extension: `.pgm`, `.csv`, anything else as raw.
pub fn read_tensor<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("csv") => read_signal_csv(path),
        _ => read_raw(path),
    }
}

/// Save all network parameters as one flat raw tensor.
pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, net: &UNet<S>) -> Result<()> {
    write_raw(path, &net.flatten())
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>, net: &mut UNet<S>) -> Result<()> {
    let flat = read_raw::<S>(path)?;
    net.load_flat(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let t = Tensor::<f64>::randn(&[2, 3, 5], &mut Rng::new(1));
        let bytes = encode_raw(&t);
        assert_eq!(&bytes[..4], b"SDT1");
        assert_eq!(bytes.len(), 12 + 3 * 8 + 30 * 8);
        let back = decode_raw::<f64>(&bytes).unwrap();
        assert_eq!(back, t);
        let small: Tensor<f32> = t.cast();
        assert_eq!(decode_raw::<f32>(&encode_raw(&small)).unwrap(), small);
    }

    #[test]
    fn raw_errors_report_offsets() {
        let t = Tensor::<f64>::zeros(&[4]);
        let bytes = encode_raw(&t);
        match decode_raw::<f64>(&bytes[..20]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 20),
            e => panic!("{e}"),
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_raw::<f64>(&bad), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn pgm_constant_128() {
        let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
        bytes.extend([128u8; 6]);
        let t = decode_pgm::<f64>(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
        let enc = encode_pgm(&t, 8).unwrap();
        assert_eq!(enc[enc.len() - 6..], [128u8; 6]);
    }

    #[test]
    fn pgm_16_bit_round_trip_and_malformed_header() {
        let t = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64 / 15.0);
        let back = decode_pgm::<f64>(&encode_pgm(&t, 16).unwrap()).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
        match decode_pgm::<f64>(b"P5\n12 x\n255\n").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 6),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = Tensor::<f64>::randn(&[1, 50], &mut Rng::new(3));
        let back = decode_signal_csv::<f64>(&encode_signal_csv(&t)).unwrap();
        assert_eq!(back, t);
        assert!(decode_signal_csv::<f64>("value\n1.0\nabc\n").is_err());
    }
}
