//! Raster file formats.
//!
//! Lossless sidecar (`.uvf`): 16-byte header — magic `UVF1`, dtype tag (u8),
//! one reserved byte, H, W, C as u16 little-endian, four reserved bytes —
//! followed by H·W·C little-endian scalars. PNG files are 8-bit previews of
//! the same data.

use super::Raster;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::io::BufWriter;
use std::path::Path;

const MAGIC: &[u8; 4] = b"UVF1";

pub fn write_uvf<T: Scalar>(path: &Path, r: &Raster<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + r.data().len() * T::BYTE_WIDTH);
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE_TAG);
    buf.push(0);
    buf.extend_from_slice(&(r.height() as u16).to_le_bytes());
    buf.extend_from_slice(&(r.width() as u16).to_le_bytes());
    buf.extend_from_slice(&(r.channels() as u16).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    for &v in r.data() {
        v.write_le(&mut buf);
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_uvf<T: Scalar>(path: &Path) -> Result<Raster<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() < 16 || &raw[0..4] != MAGIC {
        return Err(Error::Format {
            what: "uvf raster",
            msg: format!("bad header in {}", path.display()),
        });
    }
    if raw[4] != T::DTYPE_TAG {
        return Err(Error::Format {
            what: "uvf raster",
            msg: format!("dtype tag {} != {}", raw[4], T::DTYPE_TAG),
        });
    }
    let h = u16::from_le_bytes([raw[6], raw[7]]) as usize;
    let w = u16::from_le_bytes([raw[8], raw[9]]) as usize;
    let c = u16::from_le_bytes([raw[10], raw[11]]) as usize;
    let need = 16 + h * w * c * T::BYTE_WIDTH;
    if raw.len() != need {
        return Err(Error::Format {
            what: "uvf raster",
            msg: format!("payload {} bytes, expected {}", raw.len() - 16, need - 16),
        });
    }
    let data: Vec<T> = raw[16..]
        .chunks_exact(T::BYTE_WIDTH)
        .map(|ch| T::read_le(ch))
        .collect();
    Raster::from_data(h, w, c, data)
}

/// 8-bit PNG preview; 1-channel rasters become grayscale, 3-channel RGB.
pub fn write_png<T: Scalar>(path: &Path, r: &Raster<T>) -> Result<()> {
    let color = match r.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::invalid(
                "write_png",
                format!("unsupported channel count {c}"),
            ))
        }
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), r.width() as u32, r.height() as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format {
        what: "png",
        msg: e.to_string(),
    })?;
    let bytes: Vec<u8> = r
        .data()
        .iter()
        .map(|&v| {
            let f = v.to_f64_c().clamp(0.0, 1.0);
            (f * 255.0).round() as u8
        })
        .collect();
    writer.write_image_data(&bytes).map_err(|e| Error::Format {
        what: "png",
        msg: e.to_string(),
    })?;
    Ok(())
}

/// Horizontal strip of equally sized rasters with a 2-px gutter; grayscale
/// panels are expanded to RGB.
pub fn contact_sheet<T: Scalar>(panels: &[&Raster<T>]) -> Result<Raster<T>> {
    if panels.is_empty() {
        return Err(Error::invalid("contact_sheet", "no panels"));
    }
    let h = panels[0].height();
    let w = panels[0].width();
    let gutter = 2;
    let total_w = panels.len() * w + (panels.len() - 1) * gutter;
    let mut out = Raster::full(h, total_w, 3, T::from_f64_c(0.15));
    for (i, p) in panels.iter().enumerate() {
        if p.height() != h || p.width() != w {
            return Err(Error::shape(
                "contact_sheet",
                format!("{}x{}", h, w),
                format!("{}x{}", p.height(), p.width()),
            ));
        }
        let x0 = i * (w + gutter);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let v = if p.channels() == 1 {
                        p.get(y, x, 0)
                    } else {
                        p.get(y, x, ch.min(p.channels() - 1))
                    };
                    out.set(y, x0 + x, ch, v);
                }
            }
        }
    }
    Ok(out)
}
