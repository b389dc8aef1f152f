//! PNG output: per-frame export and multi-row frame grids.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Dims4, VideoTensor};

/// 8-bit quantization with round-half-up: `floor(255 * v + 0.5)`.
pub fn quantize(v: f32) -> Result<u8> {
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(Error::Range(format!("pixel value {v} outside [0,1]")));
    }
    Ok((255.0 * v + 0.5).floor() as u8)
}

/// Writes `frame_000.png`, `frame_001.png`, ... into `dir` (created if needed).
pub fn export_frames(
    video: &VideoTensor,
    dir: impl AsRef<Path>,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let d = video.dims();
    if d.channels != 1 && d.channels != 3 {
        return Err(Error::Config(format!(
            "frame export supports 1 or 3 channels, video has {}",
            d.channels
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = (d.frames.saturating_sub(1)).to_string().len().max(3);
    let mut paths = Vec::with_capacity(d.frames);
    for f in 0..d.frames {
        let frame = video.frame(f);
        let bytes = frame
            .iter()
            .map(|&v| quantize(v))
            .collect::<Result<Vec<u8>>>()?;
        let path = dir.join(format!("frame_{f:0width$}.png"));
        if d.channels == 1 {
            GrayImage::from_raw(d.width as u32, d.height as u32, bytes)
                .expect("buffer sized from dims")
                .save(&path)?;
        } else {
            RgbImage::from_raw(d.width as u32, d.height as u32, bytes)
                .expect("buffer sized from dims")
                .save(&path)?;
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Stacks videos as rows of frames (frames left to right) into one image.
/// Grayscale rows are replicated to RGB. A 1-pixel white gutter separates cells.
pub fn frame_grid(rows: &[&VideoTensor]) -> Result<RgbImage> {
    let first = rows
        .first()
        .ok_or_else(|| Error::EmptyInput("frame grid needs at least one row".into()))?
        .dims();
    for r in rows {
        let d = r.dims();
        if (d.frames, d.height, d.width) != (first.frames, first.height, first.width) {
            return Err(Error::ShapeMismatch(format!("grid row {d} vs {first}")));
        }
        if d.channels != 1 && d.channels != 3 {
            return Err(Error::Config(format!(
                "grid rows need 1 or 3 channels, got {}",
                d.channels
            )));
        }
    }
    let gut = 1u32;
    let (fw, fh) = (first.width as u32, first.height as u32);
    let w = first.frames as u32 * (fw + gut) + gut;
    let h = rows.len() as u32 * (fh + gut) + gut;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (ri, video) in rows.iter().enumerate() {
        let d = video.dims();
        for f in 0..d.frames {
            let ox = gut + f as u32 * (fw + gut);
            let oy = gut + ri as u32 * (fh + gut);
            for y in 0..d.height {
                for x in 0..d.width {
                    let px = if d.channels == 1 {
                        let g = quantize(video.data()[d.index(f, y, x, 0)])?;
                        [g, g, g]
                    } else {
                        let i = d.index(f, y, x, 0);
                        let s = &video.data()[i..i + 3];
                        [quantize(s[0])?, quantize(s[1])?, quantize(s[2])?]
                    };
                    img.put_pixel(ox + x as u32, oy + y as u32, Rgb(px));
                }
            }
        }
    }
    Ok(img)
}

/// Renders a nonnegative `F x H x W` map as a 3-channel heat video,
/// normalised by `scale` (values at or above `scale` saturate).
pub fn heat_video(
    values: &[f32],
    frames: usize,
    height: usize,
    width: usize,
    scale: f32,
) -> Result<VideoTensor> {
    let dims = Dims4::new(frames, height, width, 3);
    if values.len() != frames * height * width {
        return Err(Error::ShapeMismatch(format!(
            "heat map has {} values for {frames}x{height}x{width}",
            values.len()
        )));
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut data = Vec::with_capacity(dims.len());
    for &v in values {
        let s = (v / scale).clamp(0.0, 1.0);
        // black -> red -> yellow -> white
        data.push((3.0 * s).min(1.0));
        data.push((3.0 * s - 1.0).clamp(0.0, 1.0));
        data.push((3.0 * s - 2.0).clamp(0.0, 1.0));
    }
    VideoTensor::new(dims, data)
}

pub fn save_grid(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)?;
    Ok(())
}
