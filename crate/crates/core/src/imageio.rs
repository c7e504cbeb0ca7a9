//! Netpbm-family image files: binary PPM (P6) frames, PGM (P5)
//! visualizations and grayscale PFM (`Pf`) float maps.
//!
//! PFM rows are stored bottom to top with a negative scale marking
//! little-endian payloads. Invalid pixels in float maps are written as NaN.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// One colour plane as a row-major buffer.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.chunks_exact(3).map(|px| px[c]).collect()
    }

    /// Values quantized to 8 bits, as stored in a PPM.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect();
        Self { width: self.width, height: self.height, data }
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let (magic, width, height, maxval) = read_pnm_header(&mut r)?;
        if magic != "P6" {
            return Err(Error::Format(format!("expected P6, found {magic}")));
        }
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PPM is supported (maxval {maxval})")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format("PPM payload truncated".into()))?;
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self { width, height, data })
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads magic, width, height and maxval, skipping `#` comments, and
/// consumes the single whitespace byte before the payload.
fn read_pnm_header(r: &mut impl BufRead) -> Result<(String, usize, usize, usize)> {
    let mut tokens = Vec::with_capacity(4);
    let mut current = String::new();
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PNM header".into()));
        }
        let c = byte[0] as char;
        if c == '#' && current.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else {
            current.push(c);
        }
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PNM header field `{s}`")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if w == 0 || h == 0 {
        return Err(Error::Format("empty image".into()));
    }
    Ok((tokens[0].clone(), w, h, maxval))
}

/// Single-channel float image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn write_pfm(&self, w: impl Write) -> Result<()> {
        write_pfm_planes(self.width, self.height, &[&self.data], w)
    }

    pub fn read_pfm(r: impl Read) -> Result<Self> {
        let (width, height, mut planes) = read_pfm_planes(r)?;
        if planes.len() != 1 {
            return Err(Error::Format("expected a grayscale PFM".into()));
        }
        Ok(Self { width, height, data: planes.remove(0) })
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pfm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pfm(std::fs::File::open(path)?)
    }

    /// 8-bit PGM of the values mapped linearly from `[lo, hi]`; NaN pixels
    /// are written as 0.
    pub fn write_pgm(&self, lo: f32, hi: f32, mut w: impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| if v.is_finite() { 1 + ((v - lo) / span * 254.0).clamp(0.0, 254.0).round() as u8 } else { 0 })
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Writes one (`Pf`) or three (`PF`) row-major float planes as a
/// little-endian PFM.
pub fn write_pfm_planes(width: usize, height: usize, planes: &[&[f32]], mut w: impl Write) -> Result<()> {
    let magic = match planes.len() {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::Format(format!("PFM holds 1 or 3 planes, got {n}"))),
    };
    if planes.iter().any(|p| p.len() != width * height) {
        return Err(Error::DimensionMismatch(format!("PFM planes for {width}x{height}")));
    }
    write!(w, "{magic}\n{width} {height}\n-1.0\n")?;
    let mut bytes = Vec::with_capacity(width * height * planes.len() * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            for p in planes {
                bytes.extend_from_slice(&p[y * width + x].to_le_bytes());
            }
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads a PFM into row-major planes (one for `Pf`, three for `PF`).
pub fn read_pfm_planes(r: impl Read) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("truncated PFM header".into()));
        }
        Ok(line.trim().to_string())
    };
    let channels = match next_line(&mut r)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("not a PFM file (magic `{other}`)"))),
    };
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::Format(format!("bad PFM dimensions `{dims}`"))),
    };
    let scale: f32 = next_line(&mut r)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("PFM payload truncated".into()))?;
    let mut planes = vec![vec![0.0f32; width * height]; channels];
    for (i, c) in bytes.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (px, ch) = (i / channels, i % channels);
        let (row, x) = (height - 1 - px / width, px % width);
        planes[ch][row * width + x] = v;
    }
    Ok((width, height, planes))
}

/// Reads an 8-bit PGM into `[0, 1]` values.
pub fn read_pgm(r: impl Read) -> Result<GrayImage> {
    let mut r = BufReader::new(r);
    let (magic, width, height, maxval) = read_pnm_header(&mut r)?;
    if magic != "P5" || maxval != 255 {
        return Err(Error::Format(format!("expected 8-bit P5, found {magic} maxval {maxval}")));
    }
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("PGM payload truncated".into()))?;
    GrayImage::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
}
