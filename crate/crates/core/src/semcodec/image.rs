//! 8-bit grayscale images and the binary PGM/PPM subset the codec reads.

use std::fs;
use std::path::Path;

use super::CodecError;

/// Row-major 8-bit grayscale image.
///
/// Images fed to the encoder are padded to multiples of 32 by edge
/// replication; `original_width`/`original_height` keep the pre-padding size
/// so reconstructions can be cropped back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub original_width: usize,
    pub original_height: usize,
}

pub const CELL: usize = 32;

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

impl ImageGray {
    /// An unpadded image whose original size is its size.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(CodecError::Malformed(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            original_width: width,
            original_height: height,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            original_width: width,
            original_height: height,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pads to multiples of 32 by replicating the last row and column.
    pub fn padded(&self) -> Self {
        let w = round_up(self.width, CELL);
        let h = round_up(self.height, CELL);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                pixels.push(self.get(x.min(self.width - 1), sy));
            }
        }
        Self {
            width: w,
            height: h,
            pixels,
            original_width: self.original_width,
            original_height: self.original_height,
        }
    }

    /// The top-left `original_width × original_height` region.
    pub fn cropped(&self) -> Self {
        let (w, h) = (self.original_width, self.original_height);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            pixels.extend_from_slice(&self.pixels[y * self.width..y * self.width + w]);
        }
        Self {
            width: w,
            height: h,
            pixels,
            original_width: w,
            original_height: h,
        }
    }

    pub fn is_cell_aligned(&self) -> bool {
        self.width % CELL == 0 && self.height % CELL == 0
    }

    /// Binary PGM (P5) encoding of the full pixel grid.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, CodecError> {
    if bytes.len() < 2 {
        return Err(CodecError::Truncated);
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(CodecError::UnsupportedMagic(
            String::from_utf8_lossy(&magic).into_owned(),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(CodecError::Truncated),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Malformed("expected a header number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CodecError::Malformed("header number out of range".into()))?;
    }
    // Exactly one whitespace byte ends the header.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(CodecError::Malformed("missing header terminator".into())),
        None => return Err(CodecError::Truncated),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(CodecError::Malformed("zero image dimension".into()));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos,
    })
}

/// Parses P5/P6 bytes into an unpadded grayscale image.
///
/// Colour pixels become BT.601 luma, rounded half-up.
pub fn parse_pnm(bytes: &[u8]) -> Result<ImageGray, CodecError> {
    let h = parse_header(bytes)?;
    if h.maxval != 255 {
        return Err(CodecError::UnsupportedMaxval(h.maxval));
    }
    let channels = if &h.magic == b"P6" { 3 } else { 1 };
    let need = h.width * h.height * channels;
    let data = bytes
        .get(h.data_start..h.data_start + need)
        .ok_or(CodecError::Truncated)?;
    let pixels = if channels == 1 {
        data.to_vec()
    } else {
        data.chunks_exact(3)
            .map(|p| {
                let y = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
                ((y + 500) / 1000) as u8
            })
            .collect()
    };
    ImageGray::new(h.width, h.height, pixels)
}

/// Reads a P5/P6 file and pads it for the codec.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray, CodecError> {
    let bytes = fs::read(path)?;
    Ok(parse_pnm(&bytes)?.padded())
}
