//! First-layer mask images and mask statistics.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::snip::PruneResult;
use crate::tensor::Real;

pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Floor on the background density in [`foreground_retention`].
pub const RETENTION_EPS: f64 = 1e-3;

/// A 28×28 grid of values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub pixels: Vec<f64>,
}

impl MaskImage {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::shape(format!("mask image needs {PIXELS} pixels, got {}", pixels.len())));
        }
        Ok(MaskImage { pixels })
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / PIXELS as f64
    }
}

/// Averages each input row of a `784×fan_out` mask over its columns.
pub fn image_from_mask(mask: &[bool], fan_out: usize) -> Result<MaskImage> {
    if fan_out == 0 || mask.len() != PIXELS * fan_out {
        return Err(Error::shape(format!("expected a {PIXELS}×{fan_out} mask, got {} entries", mask.len())));
    }
    MaskImage::new(
        mask.chunks(fan_out)
            .map(|row| row.iter().filter(|&&k| k).count() as f64 / fan_out as f64)
            .collect(),
    )
}

/// Image of the `fc1.weight` mask of a LeNet-300-100.
pub fn mask_to_image<T: Real>(model: &Model<T>) -> Result<MaskImage> {
    if model.spec.kind != ModelKind::Lenet300 {
        return Err(Error::Config(format!("mask images need lenet300, got {}", model.spec.name())));
    }
    let p = model.param("fc1.weight").ok_or_else(|| Error::State("lenet300 without fc1.weight".into()))?;
    let mask: Vec<bool> = p.mask.data().iter().map(|&c| c != T::zero()).collect();
    image_from_mask(&mask, p.value.shape()[1])
}

/// Binary PGM (`P5`) of `rows×cols` values in [0, 1], quantized to `round(255·v)`.
pub fn pgm_bytes(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::shape(format!("{} values for a {rows}×{cols} image", values.len())));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    Ok(out)
}

pub fn write_pgm(img: &MaskImage, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(&img.pixels, SIDE, SIDE)?)?;
    Ok(())
}

/// Parses a `P5` file with maxval 255; returns `(rows, cols, values/255)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only P5 with maxval 255 is supported"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if body.len() != rows * cols {
        return Err(bad("raster size does not match header"));
    }
    Ok((rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_pgm(path: &Path) -> Result<MaskImage> {
    let (rows, cols, values) = parse_pgm(&fs::read(path)?)?;
    if (rows, cols) != (SIDE, SIDE) {
        return Err(Error::Format(format!("expected a {SIDE}×{SIDE} image, got {rows}×{cols}")));
    }
    MaskImage::new(values)
}

/// Tiles equally sized images into a `grid_rows×grid_cols` atlas, row-major;
/// missing tiles stay black.
pub fn atlas(images: &[MaskImage], grid_rows: usize, grid_cols: usize) -> Vec<f64> {
    let width = grid_cols * SIDE;
    let mut out = vec![0.0; grid_rows * SIDE * width];
    for (k, img) in images.iter().enumerate().take(grid_rows * grid_cols) {
        let (gr, gc) = (k / grid_cols, k % grid_cols);
        for r in 0..SIDE {
            let dst = (gr * SIDE + r) * width + gc * SIDE;
            out[dst..dst + SIDE].copy_from_slice(&img.pixels[r * SIDE..(r + 1) * SIDE]);
        }
    }
    out
}

/// `|a ∧ b| / |a ∨ b|` over every prunable entry; 1 when both are empty.
pub fn mask_iou(a: &PruneResult, b: &PruneResult) -> Result<f64> {
    if a.names != b.names || a.masks.iter().map(Vec::len).ne(b.masks.iter().map(Vec::len)) {
        return Err(Error::shape("masks cover different parameters"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.flat().zip(b.flat()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean image value over pixels where `class_mean > hi`, divided by the mean
/// over pixels where `class_mean < lo` (floored at [`RETENTION_EPS`]).
pub fn foreground_retention(img: &MaskImage, class_mean: &[f64], hi: f64, lo: f64) -> Result<f64> {
    if class_mean.len() != PIXELS {
        return Err(Error::shape(format!("class mean needs {PIXELS} pixels")));
    }
    let mean_where = |pred: &dyn Fn(f64) -> bool| {
        let sel: Vec<f64> = img.pixels.iter().zip(class_mean).filter(|(_, &m)| pred(m)).map(|(&v, _)| v).collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    };
    let fg = mean_where(&|m| m > hi).ok_or_else(|| Error::Data("class mean has no foreground pixels".into()))?;
    let bg = mean_where(&|m| m < lo).unwrap_or(0.0);
    Ok(fg / bg.max(RETENTION_EPS))
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
