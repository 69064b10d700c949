//! Binary PPM (`P6`) and PGM (`P5`) with 8-bit samples.
//!
//! Header grammar: magic, whitespace, width, whitespace, height, whitespace,
//! maxval, exactly one whitespace byte, raster. `#` starts a comment that runs
//! to the end of the line and may appear wherever whitespace may.

use std::path::Path;

use crate::error::{CtoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// `P5`, one sample per pixel.
    Gray,
    /// `P6`, three samples per pixel.
    Rgb,
}

impl PnmKind {
    pub fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Gray => b"P5",
            PnmKind::Rgb => b"P6",
        }
    }
}

/// Decoded raster, row-major and interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(CtoError::Format {
            path: self.path.to_owned(),
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
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
        let had_space = self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#');
        self.skip_space();
        if !had_space {
            return self.fail(format!("expected whitespace before {what}"));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.bytes.get(self.pos) {
                None => self.fail(format!("unexpected end of file, expected {what}")),
                Some(_) => self.fail(format!("expected decimal {what}")),
            };
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            }
        }
    }
}

/// Parses `bytes`; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &str) -> Result<Pnm> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Gray,
        Some(b"P6") => PnmKind::Rgb,
        _ => return cur.fail("expected magic `P5` or `P6`"),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        cur.pos = maxval_at;
        return cur.fail(format!("maxval {maxval} unsupported (expected 1..=255)"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return cur.fail("expected one whitespace byte after maxval"),
        None => return cur.fail("unexpected end of file before raster"),
    }
    if width == 0 || height == 0 {
        return cur.fail(format!("empty raster {width}x{height}"));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(kind.channels()));
    let Some(len) = len else {
        return cur.fail("raster size overflows");
    };
    let raster = &bytes[cur.pos..];
    if raster.len() < len {
        cur.pos = bytes.len();
        return cur.fail(format!("truncated raster: {} of {len} bytes", raster.len()));
    }
    if raster.len() > len {
        cur.pos += len;
        return cur.fail(format!("{} trailing bytes after raster", raster.len() - len));
    }
    if let Some(i) = raster.iter().position(|&v| usize::from(v) > maxval) {
        cur.pos += i;
        return cur.fail(format!("sample {} exceeds maxval {maxval}", raster[i]));
    }
    Ok(Pnm {
        kind,
        width,
        height,
        maxval: maxval as u16,
        data: raster.to_vec(),
    })
}

/// Encodes with the canonical header `P? W H 255\n`.
pub fn encode(kind: PnmKind, width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), width * height * kind.channels(), "raster size");
    let magic = kind.magic();
    let mut out = format!("{}\n{width} {height}\n255\n", std::str::from_utf8(magic).unwrap())
        .into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn read(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| CtoError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn read_kind(path: &Path, kind: PnmKind) -> Result<Pnm> {
    let img = read(path)?;
    if img.kind != kind {
        return Err(CtoError::Format {
            path: path.display().to_string(),
            offset: 0,
            msg: format!("expected {:?} image, found {:?}", kind, img.kind),
        });
    }
    Ok(img)
}

pub fn write(path: &Path, kind: PnmKind, width: usize, height: usize, data: &[u8]) -> Result<()> {
    std::fs::write(path, encode(kind, width, height, data)).map_err(|e| CtoError::io(path, e))
}
