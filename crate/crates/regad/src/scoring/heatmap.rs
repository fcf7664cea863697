use std::path::Path;

use image::RgbImage;
use ndarray::Array2;

use crate::{RegadError, Result};

/// Blue → cyan → yellow → red ramp for `t` in `[0, 1]`.
fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b].map(|v| (v * 255.0).round() as u8)
}

/// Min-max normalizes `scores` and maps them through a colour ramp. A flat
/// map renders as the low end of the ramp.
pub fn render_heatmap(scores: &Array2<f64>) -> RgbImage {
    let (h, w) = scores.dim();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = scores[[y as usize, x as usize]];
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        image::Rgb(ramp(t))
    })
}

pub fn save_heatmap(scores: &Array2<f64>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| RegadError::io(parent, e))?;
    }
    render_heatmap(scores)
        .save(path)
        .map_err(|e| RegadError::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_map_to_ramp_ends() {
        let m = Array2::from_shape_vec((1, 2), vec![3.0, 7.0]).unwrap();
        let img = render_heatmap(&m);
        assert_eq!(img.get_pixel(0, 0).0, ramp(0.0));
        assert_eq!(img.get_pixel(1, 0).0, ramp(1.0));
        assert_eq!(ramp(0.0), [0, 0, 128]);
        assert_eq!(ramp(1.0), [128, 0, 0]);
    }
}
