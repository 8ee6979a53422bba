//! Binary series and mask container (little-endian).
//!
//! ```text
//! "GFS1"            magic
//! u32 T, H, W
//! u8  flags         bit0 log-space, bit1 normalized, bit2 mask (values omitted),
//!                   bit3 explicit day-index table, bit4 f64 values
//! [f64 mean, f64 std]          if normalized
//! H×W u8 land mask (0/1)
//! [T × u32 day index]          if bit3
//! T frames: H×W values (f32, or f64 with bit4; NaN = missing), unless bit2,
//!           then H×W status bytes (0 observed, 1 cloud, 2 land)
//! ```
//!
//! Writers set bit3 only when days are not `0..T`, and bit4 only when some
//! observed value is not exactly representable as f32, so series meeting both
//! conditions use the plain f32 layout.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{CloudMask, GridError, NormStats, PixelStatus, Result, Scene, SceneSeries, ValueSpace};

pub const MAGIC: &[u8; 4] = b"GFS1";

const FLAG_LOG: u8 = 1 << 0;
const FLAG_NORMALIZED: u8 = 1 << 1;
const FLAG_MASK: u8 = 1 << 2;
const FLAG_DAY_INDEX: u8 = 1 << 3;
const FLAG_F64: u8 = 1 << 4;
const KNOWN_FLAGS: u8 = FLAG_LOG | FLAG_NORMALIZED | FLAG_MASK | FLAG_DAY_INDEX | FLAG_F64;

fn push_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| GridError::DimensionOverflow(format!("{v} > u32::MAX")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn header(buf: &mut Vec<u8>, t: usize, h: usize, w: usize, flags: u8) -> Result<()> {
    buf.extend_from_slice(MAGIC);
    push_u32(buf, t)?;
    push_u32(buf, h)?;
    push_u32(buf, w)?;
    buf.push(flags);
    Ok(())
}

fn f32_exact(v: f64) -> bool {
    v.is_nan() || (v as f32) as f64 == v
}

pub fn encode_series(series: &SceneSeries) -> Result<Vec<u8>> {
    let (h, w) = series.dim();
    let t = series.len();
    let mut flags = match series.space() {
        ValueSpace::Concentration => 0,
        ValueSpace::Log10 => FLAG_LOG,
        ValueSpace::Normalized(_) => FLAG_LOG | FLAG_NORMALIZED,
    };
    let contiguous = series
        .day_index()
        .iter()
        .enumerate()
        .all(|(i, &d)| d as usize == i);
    if !contiguous {
        flags |= FLAG_DAY_INDEX;
    }
    let wide = series
        .scenes()
        .iter()
        .any(|s| s.values().iter().any(|&v| !f32_exact(v)));
    if wide {
        flags |= FLAG_F64;
    }
    let value_bytes = if wide { 8 } else { 4 };
    let mut buf = Vec::with_capacity(64 + h * w + t * h * w * (value_bytes + 1));
    header(&mut buf, t, h, w, flags)?;
    if let ValueSpace::Normalized(s) = series.space() {
        buf.extend_from_slice(&s.mean.to_le_bytes());
        buf.extend_from_slice(&s.std.to_le_bytes());
    }
    buf.extend(series.land().iter().map(|&l| u8::from(l)));
    if !contiguous {
        for &d in series.day_index() {
            buf.extend_from_slice(&d.to_le_bytes());
        }
    }
    for scene in series.scenes() {
        for &v in scene.values() {
            if wide {
                buf.extend_from_slice(&v.to_le_bytes());
            } else {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf.extend(scene.status().iter().map(|&s| s as u8));
    }
    Ok(buf)
}

pub fn save_series(series: &SceneSeries, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_series(series)?)?;
    Ok(())
}

pub fn save_mask(mask: &CloudMask, land: &Array2<bool>, path: impl AsRef<Path>) -> Result<()> {
    if mask.dim() != land.dim() {
        return Err(GridError::ShapeMismatch {
            expected: land.dim(),
            got: mask.dim(),
        });
    }
    let (h, w) = mask.dim();
    let mut buf = Vec::with_capacity(32 + 2 * h * w);
    header(&mut buf, 1, h, w, FLAG_MASK)?;
    buf.extend(land.iter().map(|&l| u8::from(l)));
    buf.extend(mask.pattern().iter().zip(land.iter()).map(|(&p, &l)| {
        if l {
            PixelStatus::Land as u8
        } else if p {
            PixelStatus::Cloud as u8
        } else {
            PixelStatus::Observed as u8
        }
    }));
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(GridError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

struct Header {
    t: usize,
    h: usize,
    w: usize,
    flags: u8,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(GridError::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let t = r.u32()?;
    let h = r.u32()?;
    let w = r.u32()?;
    let flags = r.take(1)?[0];
    if flags & !KNOWN_FLAGS != 0 {
        return Err(GridError::BadFlags(flags));
    }
    if flags & FLAG_NORMALIZED != 0 && flags & FLAG_LOG == 0 {
        return Err(GridError::BadFlags(flags));
    }
    if t == 0 || h == 0 || w == 0 {
        return Err(GridError::InvalidDimensions(format!("{t}x{h}x{w}")));
    }
    Ok(Header { t, h, w, flags })
}

fn read_land(r: &mut Reader, h: usize, w: usize) -> Result<Array2<bool>> {
    let bytes = r.take(h * w)?;
    let mut land = Vec::with_capacity(h * w);
    for &b in bytes {
        land.push(match b {
            0 => false,
            1 => true,
            other => return Err(GridError::Corrupt(format!("land byte {other}"))),
        });
    }
    Ok(Array2::from_shape_vec((h, w), land).unwrap())
}

fn read_status(r: &mut Reader, h: usize, w: usize) -> Result<Array2<PixelStatus>> {
    let bytes = r.take(h * w)?;
    let mut out = Vec::with_capacity(h * w);
    for &b in bytes {
        out.push(
            PixelStatus::from_byte(b)
                .ok_or_else(|| GridError::Corrupt(format!("status byte {b}")))?,
        );
    }
    Ok(Array2::from_shape_vec((h, w), out).unwrap())
}

fn checked_len(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| GridError::DimensionOverflow(format!("{parts:?}")))
}

pub fn decode_series(bytes: &[u8]) -> Result<SceneSeries> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let hd = read_header(&mut r)?;
    if hd.flags & FLAG_MASK != 0 {
        return Err(GridError::Corrupt("file holds a mask, not a series".into()));
    }
    let wide = hd.flags & FLAG_F64 != 0;
    let pixels = checked_len(&[hd.h, hd.w])?;
    let frame = checked_len(&[pixels, if wide { 9 } else { 5 }])?;
    let payload = checked_len(&[frame, hd.t])?;
    // Reject impossible sizes before allocating anything.
    if payload > r.remaining() {
        return Err(GridError::Truncated {
            offset: r.pos,
            needed: payload,
            available: r.remaining(),
        });
    }
    let space = if hd.flags & FLAG_NORMALIZED != 0 {
        let mean = r.f64()?;
        let std = r.f64()?;
        ValueSpace::Normalized(
            NormStats::new(mean, std)
                .map_err(|_| GridError::Corrupt(format!("norm stats ({mean}, {std})")))?,
        )
    } else if hd.flags & FLAG_LOG != 0 {
        ValueSpace::Log10
    } else {
        ValueSpace::Concentration
    };
    let land = read_land(&mut r, hd.h, hd.w)?;
    let day_index = if hd.flags & FLAG_DAY_INDEX != 0 {
        (0..hd.t)
            .map(|_| r.u32().map(|d| d as u32))
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..hd.t as u32).collect()
    };
    let mut scenes = Vec::with_capacity(hd.t);
    for _ in 0..hd.t {
        let raw = r.take(pixels * if wide { 8 } else { 4 })?;
        let values: Vec<f64> = if wide {
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        } else {
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        };
        let status = read_status(&mut r, hd.h, hd.w)?;
        let values = Array2::from_shape_vec((hd.h, hd.w), values).unwrap();
        scenes.push(Scene::new(values, status)?);
    }
    if r.remaining() != 0 {
        return Err(GridError::Corrupt(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    SceneSeries::new(scenes, day_index, land, space)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<SceneSeries> {
    decode_series(&fs::read(path)?)
}

/// Loads a mask container; returns the mask and its land grid.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(CloudMask, Array2<bool>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    let hd = read_header(&mut r)?;
    if hd.flags != FLAG_MASK || hd.t != 1 {
        return Err(GridError::Corrupt(format!(
            "not a mask container (flags 0x{:02x}, T={})",
            hd.flags, hd.t
        )));
    }
    let pixels = checked_len(&[hd.h, hd.w, 2])?;
    if pixels > r.remaining() {
        return Err(GridError::Truncated {
            offset: r.pos,
            needed: pixels,
            available: r.remaining(),
        });
    }
    let land = read_land(&mut r, hd.h, hd.w)?;
    let status = read_status(&mut r, hd.h, hd.w)?;
    if r.remaining() != 0 {
        return Err(GridError::Corrupt("trailing bytes".into()));
    }
    for ((idx, &s), &l) in status.indexed_iter().zip(land.iter()) {
        if (s == PixelStatus::Land) != l {
            return Err(GridError::LandMismatch {
                day: 0,
                row: idx.0,
                col: idx.1,
            });
        }
    }
    let pattern = status.mapv(|s| s == PixelStatus::Cloud);
    Ok((CloudMask::from_pattern(pattern, &land)?, land))
}
