//! Grayscale PNG rendering of final images.

use d3po_core::ndcore::Tensor;
use d3po_core::preference::quantize_image;

use crate::error::{Result, ServiceError};

/// Nearest-neighbor upscale factor for served images.
pub const UPSCALE: usize = 8;

/// Encodes a flat `side * side` image in `[-1, 1]` as an 8-bit grayscale
/// PNG, each pixel repeated `scale` times in both directions.
pub fn render_png(image: &Tensor, side: usize, scale: usize) -> Result<Vec<u8>> {
    if image.len() != side * side || scale == 0 {
        return Err(ServiceError::Render(format!(
            "{} values for a {side}x{side} image at scale {scale}",
            image.len()
        )));
    }
    let levels = quantize_image(image);
    let out_side = side * scale;
    let mut pixels = Vec::with_capacity(out_side * out_side);
    for row in levels.chunks(side) {
        let wide: Vec<u8> = row
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, scale))
            .collect();
        for _ in 0..scale {
            pixels.extend_from_slice(&wide);
        }
    }
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, out_side as u32, out_side as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| ServiceError::Render(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| ServiceError::Render(e.to_string()))?;
    }
    Ok(bytes)
}

/// [`render_png`] at [`UPSCALE`], base64-encoded for JSON bodies.
pub fn render_base64(image: &Tensor, side: usize) -> Result<String> {
    use base64::Engine;
    let png = render_png(image, side, UPSCALE)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(png))
}
