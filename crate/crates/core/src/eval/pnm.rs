//! Binary PGM (P5) and PPM (P6) codec, 8-bit samples only.

use std::path::Path;

use thiserror::Error;

use super::image::{Colorspace, ImageBuffer, Pixels};
use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("unknown magic at byte {offset} (expected P5 or P6)")]
    BadMagic { offset: usize },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: &'static str },
    #[error("unsupported sample depth at byte {offset}: maxval {maxval} (8-bit only)")]
    UnsupportedDepth { offset: usize, maxval: u32 },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {value} at byte {offset} exceeds maxval {maxval}")]
    SampleOutOfRange { offset: usize, value: u8, maxval: u32 },
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut v: u64 = 0;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            v = v * 10 + u64::from(self.buf[self.pos] - b'0');
            if v > u64::from(u32::MAX) {
                return Err(PnmError::MalformedHeader {
                    offset: start,
                    reason: "header value overflows",
                });
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PnmError::MalformedHeader {
                offset: start,
                reason: what,
            });
        }
        Ok(v as u32)
    }
}

/// Decodes an in-memory P5/P6 file.
pub fn decode(buf: &[u8]) -> Result<ImageBuffer, PnmError> {
    let colorspace = match buf.get(..2) {
        Some(b"P5") => Colorspace::Gray,
        Some(b"P6") => Colorspace::Rgb,
        _ => return Err(PnmError::BadMagic { offset: 0 }),
    };
    let mut cur = Cursor { buf, pos: 2 };
    if !cur.buf.get(2).is_some_and(|c| c.is_ascii_whitespace() || *c == b'#') {
        return Err(PnmError::MalformedHeader {
            offset: 2,
            reason: "expected whitespace after magic",
        });
    }
    let width = cur.number("expected width")? as usize;
    let height = cur.number("expected height")? as usize;
    let maxval_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let maxval = cur.number("expected maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::MalformedHeader {
            offset: maxval_at,
            reason: "zero image extent",
        });
    }
    if maxval == 0 {
        return Err(PnmError::MalformedHeader {
            offset: maxval_at,
            reason: "maxval must be positive",
        });
    }
    if maxval > 255 {
        return Err(PnmError::UnsupportedDepth {
            offset: maxval_at,
            maxval,
        });
    }
    match cur.buf.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(PnmError::MalformedHeader {
                offset: cur.pos,
                reason: "expected single whitespace before payload",
            })
        }
    }
    let expected = width * height * colorspace.channels();
    let payload = &buf[cur.pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            offset: cur.pos,
            expected,
            found: payload.len(),
        });
    }
    let mut data = payload[..expected].to_vec();
    if maxval < 255 {
        for (i, v) in data.iter_mut().enumerate() {
            if u32::from(*v) > maxval {
                return Err(PnmError::SampleOutOfRange {
                    offset: cur.pos + i,
                    value: *v,
                    maxval,
                });
            }
            *v = ((u32::from(*v) * 255 + maxval / 2) / maxval) as u8;
        }
    }
    Ok(ImageBuffer::from_u8(width, height, colorspace, data).expect("sample count checked above"))
}

/// Encodes as P5 (gray) or P6 (RGB) with maxval 255; real images are rounded and clipped.
pub fn encode(img: &ImageBuffer) -> Vec<u8> {
    let magic = match img.colorspace() {
        Colorspace::Gray => "P5",
        Colorspace::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    match img.to_u8().pixels() {
        Pixels::U8(d) => out.extend_from_slice(d),
        Pixels::Real(_) => unreachable!("to_u8 yields 8-bit pixels"),
    }
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_minimal_p5() {
        let mut buf = b"P5\n2 2\n255\n".to_vec();
        buf.extend([0, 64, 128, 255]);
        let img = decode(&buf).unwrap();
        assert_eq!((img.width(), img.height(), img.colorspace()), (2, 2, Colorspace::Gray));
        assert_eq!(img.pixels(), &Pixels::U8(vec![0, 64, 128, 255]));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut buf = b"P6 # made by hand\n1 1\n# depth\n255\n".to_vec();
        buf.extend([1, 2, 3]);
        let img = decode(&buf).unwrap();
        assert_eq!(img.pixels(), &Pixels::U8(vec![1, 2, 3]));
    }

    #[test]
    fn sixteen_bit_is_unsupported() {
        let mut buf = b"P5\n1 1\n65535\n".to_vec();
        buf.extend([0, 0]);
        assert_eq!(
            decode(&buf),
            Err(PnmError::UnsupportedDepth {
                offset: 7,
                maxval: 65535
            })
        );
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let buf = b"P5\n2 2\n255\n\x01\x02".to_vec();
        assert_eq!(
            decode(&buf),
            Err(PnmError::Truncated {
                offset: 11,
                expected: 4,
                found: 2
            })
        );
    }

    #[test]
    fn malformed_headers_are_distinct_errors() {
        assert_eq!(decode(b"P3\n1 1\n255\n"), Err(PnmError::BadMagic { offset: 0 }));
        assert!(matches!(
            decode(b"P5\nx 1\n255\n"),
            Err(PnmError::MalformedHeader { offset: 3, .. })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n255"),
            Err(PnmError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn low_maxval_is_rescaled() {
        let buf = b"P5\n2 1\n1\n\x00\x01".to_vec();
        assert_eq!(decode(&buf).unwrap().pixels(), &Pixels::U8(vec![0, 255]));
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), pool in proptest::collection::vec(any::<u8>(), 192)) {
            let cs = if rgb { Colorspace::Rgb } else { Colorspace::Gray };
            let data = pool[..w * h * cs.channels()].to_vec();
            let img = ImageBuffer::from_u8(w, h, cs, data).unwrap();
            prop_assert_eq!(decode(&encode(&img)).unwrap(), img);
        }
    }
}
