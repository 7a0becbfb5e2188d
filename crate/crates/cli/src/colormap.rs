use std::path::{Path, PathBuf};

/// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[f64; 3]; 9] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.267, 0.749, 0.441],
    [0.993, 0.906, 0.144],
];

fn viridis(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let a = x - i as f64;
    std::array::from_fn(|k| ((VIRIDIS[i][k] * (1.0 - a) + VIRIDIS[i + 1][k] * a) * 255.0).round() as u8)
}

/// Writes `values` (row-major `h × w`) through the colormap, scaled to their
/// own range. The file is named `{stem}_min{lo}_max{hi}.png` inside `dir`.
pub fn write_depth_png(dir: &Path, stem: &str, values: &[f64], h: usize, w: usize) -> std::io::Result<PathBuf> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            img.put_pixel(j as u32, i as u32, image::Rgb(viridis((values[i * w + j] - lo) / span)));
        }
    }
    let path = dir.join(format!("{stem}_min{lo:.3}_max{hi:.3}.png"));
    img.save_with_format(&path, image::ImageFormat::Png).map_err(std::io::Error::other)?;
    Ok(path)
}
