//! Class maps as binary PPM images with a fixed palette.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

/// Colors of classes 1, 2, ...; class 0 is black.
pub const PALETTE: [[u8; 3]; 24] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
    [100, 60, 20],
    [20, 100, 60],
    [60, 20, 100],
];

pub fn class_color(class: u32) -> Result<[u8; 3]> {
    match class {
        0 => Ok([0, 0, 0]),
        c if c as usize <= PALETTE.len() => Ok(PALETTE[c as usize - 1]),
        c => Err(Error::Data(format!("class {c} exceeds the {}-color palette", PALETTE.len()))),
    }
}

pub fn encode_ppm(height: usize, width: usize, classes: &[u32]) -> Result<Vec<u8>> {
    if classes.len() != height * width {
        return Err(Error::Shape(format!("{} labels for a {height}x{width} map", classes.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &c in classes {
        out.extend_from_slice(&class_color(c)?);
    }
    Ok(out)
}

/// Inverse of [`encode_ppm`]; returns `(height, width, classes)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u32>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format("expected a binary 8-bit PPM".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM dimension {s:?}")));
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != height * width * 3 {
        return Err(Error::Format(format!("PPM body has {} bytes, expected {}", body.len(), height * width * 3)));
    }
    let classes = body
        .chunks_exact(3)
        .map(|px| {
            if px == [0, 0, 0] {
                return Ok(0);
            }
            PALETTE
                .iter()
                .position(|c| c == px)
                .map(|i| i as u32 + 1)
                .ok_or_else(|| Error::Data(format!("color {px:?} is not in the palette")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((height, width, classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub class: u32,
    pub rgb: [u8; 3],
}

pub fn legend(class_count: usize) -> Result<Vec<LegendEntry>> {
    (0..=class_count as u32).map(|c| Ok(LegendEntry { class: c, rgb: class_color(c)? })).collect()
}

/// Writes the map to `path` and its legend to `path` with a `.json` extension.
pub fn render_map(path: impl AsRef<Path>, height: usize, width: usize, classes: &[u32], class_count: usize) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(height, width, classes)?)?;
    let legend = legend(class_count.max(classes.iter().copied().max().unwrap_or(0) as usize))?;
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&legend)?)?;
    Ok(())
}

/// Superpixel boundaries in white on black: a pixel is on a boundary when
/// its right or lower neighbor belongs to another superpixel.
pub fn encode_boundary_ppm(seg: &Segmentation) -> Vec<u8> {
    let (h, w) = (seg.height, seg.width);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for c in 0..w {
            let id = seg.id(r, c);
            let edge = (c + 1 < w && seg.id(r, c + 1) != id) || (r + 1 < h && seg.id(r + 1, c) != id);
            out.extend_from_slice(if edge { &[255, 255, 255] } else { &[0, 0, 0] });
        }
    }
    out
}

/// Line plot of `values` (NaN and `None` gaps skipped) as a white-on-black PPM.
pub fn render_curve(values: &[Option<f64>], height: usize, width: usize) -> Vec<u8> {
    let mut img = vec![0u8; height * width * 3];
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let hi = finite.iter().copied().fold(0.0, f64::max);
    if height > 0 && width > 0 && hi > 0.0 && values.len() > 1 {
        for (i, v) in values.iter().enumerate() {
            let Some(v) = v.filter(|v| v.is_finite()) else { continue };
            let col = i * (width - 1) / (values.len() - 1);
            let top = height - 1 - ((v / hi) * (height - 1) as f64).round() as usize;
            for row in top..height {
                let p = (row * width + col) * 3;
                img[p..p + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(img);
    out
}
