use super::RenderError;

/// Binary PPM (`P6`), byte-exact: `P6\n{w} {h}\n255\n` followed by RGB8.
pub fn encode_ppm(width: u32, height: u32, rgb8: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb8);
    out
}

pub fn encode_rgb_png(width: u32, height: u32, rgb8: &[u8]) -> Result<Vec<u8>, RenderError> {
    encode_png(width, height, png::ColorType::Rgb, rgb8)
}

pub fn encode_gray_png(width: u32, height: u32, gray8: &[u8]) -> Result<Vec<u8>, RenderError> {
    encode_png(width, height, png::ColorType::Grayscale, gray8)
}

fn encode_png(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}
