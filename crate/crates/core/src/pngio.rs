//! PNG rendering for human inspection. Float values are quantized by
//! `round(v * 255)`; the binary container keeps the exact values.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array3;

use crate::dataset::hsv_to_rgb;
use crate::error::{Error, Result};
use crate::image_buffer::{ImageBuffer, Perturbation};
use crate::warp::FlowField;

pub fn to_rgb8(image: &ImageBuffer) -> RgbImage {
    let (h, w, c) = image.dim();
    let mut out = RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let px = if c == 1 {
                let g = quantize(image.get(v, u, 0));
                [g, g, g]
            } else {
                [
                    quantize(image.get(v, u, 0)),
                    quantize(image.get(v, u, 1)),
                    quantize(image.get(v, u, 2)),
                ]
            };
            out.put_pixel(u as u32, v as u32, Rgb(px));
        }
    }
    out
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, image: &ImageBuffer) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    to_rgb8(image).save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut arr = Array3::zeros((h as usize, w as usize, 3));
    for v in 0..h {
        for u in 0..w {
            let px = img.get_pixel(u, v);
            for c in 0..3 {
                arr[(v as usize, u as usize, c)] = px.0[c] as f64 / 255.0;
            }
        }
    }
    ImageBuffer::from_array(arr)
}

/// HSV direction/magnitude rendering of a flow field: hue is the vector
/// angle, saturation the magnitude relative to the field maximum, so zero
/// flow renders white.
pub fn flow_to_image(flow: &FlowField) -> ImageBuffer {
    let (h, w) = flow.dim();
    let max_mag = flow.max_magnitude().max(1e-12);
    let mut arr = Array3::zeros((h, w, 3));
    for v in 0..h {
        for u in 0..w {
            let du = flow.du()[(v, u)];
            let dv = flow.dv()[(v, u)];
            let mag = (du * du + dv * dv).sqrt();
            let hue = dv.atan2(du).to_degrees();
            let rgb = hsv_to_rgb(hue, (mag / max_mag).min(1.0), 1.0);
            for c in 0..3 {
                arr[(v, u, c)] = rgb[c];
            }
        }
    }
    ImageBuffer::from_array_clamped(arr).expect("hsv output is finite")
}

/// Symmetric rescale of a signed perturbation into gray: zero maps to 0.5,
/// the largest absolute value to 0 or 1.
pub fn perturbation_to_image(pert: &Perturbation) -> ImageBuffer {
    let (h, w, c) = pert.dim();
    let max_abs = pert
        .delta()
        .iter()
        .fold(0.0_f64, |m, &v| m.max(v.abs()))
        .max(1e-12);
    let mut arr = Array3::zeros((h, w, c));
    for ((v, u, ch), &d) in pert.delta().indexed_iter() {
        arr[(v, u, ch)] = 0.5 + 0.5 * d / max_abs;
    }
    ImageBuffer::from_array_clamped(arr).expect("rescaled perturbation is finite")
}

/// Horizontal concatenation with a light separator strip between panels.
/// All panels must share height and channel count.
pub fn contact_sheet(panels: &[&ImageBuffer], separator: usize) -> Result<ImageBuffer> {
    if panels.is_empty() {
        return Err(Error::InvalidArgument("contact sheet needs panels".into()));
    }
    let (h, _, c) = panels[0].dim();
    for p in panels {
        if p.dim().0 != h || p.dim().2 != c {
            return Err(Error::dim(
                format!("height {h}, channels {c}"),
                format!("{:?}", p.dim()),
            ));
        }
    }
    let total_w: usize =
        panels.iter().map(|p| p.width()).sum::<usize>() + separator * (panels.len() - 1);
    let mut arr = Array3::from_elem((h, total_w, c), 0.9);
    let mut u0 = 0;
    for p in panels {
        for v in 0..h {
            for u in 0..p.width() {
                for ch in 0..c {
                    arr[(v, u0 + u, ch)] = p.get(v, u, ch);
                }
            }
        }
        u0 += p.width() + separator;
    }
    ImageBuffer::from_array(arr)
}
