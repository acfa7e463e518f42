//! Heatmap colouring and overlays for explanation maps.

use crate::data::netpbm::{GrayImage, RgbImage};
use crate::error::{Error, Result};

/// Default weight of the heatmap in [`overlay`].
pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.5;

const LOW: [f64; 3] = [128.0, 0.0, 0.0];
const HIGH: [f64; 3] = [255.0, 255.0, 0.0];

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Dark red at 0 to bright yellow at 1, linear per channel. Inputs are
/// clamped to `[0, 1]`.
pub fn colormap(u: f64) -> [u8; 3] {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    std::array::from_fn(|c| round_half_up(LOW[c] + (HIGH[c] - LOW[c]) * u))
}

/// Colours a `height x width` grid of normalised scores.
pub fn heatmap(scores: &[f64], width: usize, height: usize) -> Result<RgbImage> {
    if scores.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} scores for a {height}x{width} heatmap",
            scores.len()
        )));
    }
    let pixels = scores.iter().flat_map(|&u| colormap(u)).collect();
    RgbImage::new(width, height, pixels)
}

/// `round(alpha·heat + (1 - alpha)·gray)` per channel, with the grayscale
/// source repeated across R, G and B.
pub fn overlay(heat: &RgbImage, gray: &GrayImage, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    if (heat.width, heat.height) != (gray.width, gray.height) {
        return Err(Error::Dimension(format!(
            "heatmap is {}x{}, image is {}x{}",
            heat.width, heat.height, gray.width, gray.height
        )));
    }
    let pixels = heat
        .pixels
        .chunks_exact(3)
        .zip(&gray.pixels)
        .flat_map(|(rgb, &g)| {
            let blend =
                move |h: u8| round_half_up(alpha * f64::from(h) + (1.0 - alpha) * f64::from(g));
            [blend(rgb[0]), blend(rgb[1]), blend(rgb[2])]
        })
        .collect();
    RgbImage::new(heat.width, heat.height, pixels)
}
