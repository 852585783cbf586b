//! The atomic visual unit: one RGB screenshot plus its position in the video.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

/// One screenshot of a recording.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    /// Position in the source video (raw frame index, not the sampled slot).
    pub index: usize,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(index: usize, image: RgbImage) -> Self {
        Self { index, image }
    }

    /// A frame filled with one colour.
    pub fn filled(index: usize, width: u32, height: u32, color: [u8; 3]) -> Self {
        Self::new(index, RgbImage::from_pixel(width, height, Rgb(color)))
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.image.get_pixel(x, y).0
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, image::ImageError> {
        let mut buf = Cursor::new(Vec::new());
        self.image.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
        self.image.save_with_format(path, ImageFormat::Png)
    }

    pub fn load_png(index: usize, path: impl AsRef<Path>) -> Result<Self, image::ImageError> {
        let image = image::open(path)?.to_rgb8();
        Ok(Self::new(index, image))
    }

    /// Per-channel mean absolute difference against a frame of the same size.
    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        assert_eq!(self.image.dimensions(), other.image.dimensions());
        let total: u64 = self
            .image
            .as_raw()
            .iter()
            .zip(other.image.as_raw())
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        total as f64 / self.image.as_raw().len().max(1) as f64
    }
}

/// File name for the `index`-th frame of a persisted sample.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// Write frames as `frame_%04d.png` into `dir`.
pub fn save_frames(frames: &[Frame], dir: &Path) -> Result<(), image::ImageError> {
    std::fs::create_dir_all(dir).map_err(image::ImageError::IoError)?;
    for (i, frame) in frames.iter().enumerate() {
        frame.save_png(dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Load every `frame_%04d.png` in `dir` in index order.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>, image::ImageError> {
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_file_name(frames.len()));
        if !path.exists() {
            break;
        }
        frames.push(Frame::load_png(frames.len(), &path)?);
    }
    Ok(frames)
}

/// Number of consecutive `frame_%04d.png` files in `dir`.
pub fn count_frames(dir: &Path) -> usize {
    (0..)
        .take_while(|&i| dir.join(frame_file_name(i)).exists())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let mut f = Frame::filled(3, 7, 5, [10, 20, 30]);
        f.image.put_pixel(2, 2, Rgb([255, 0, 0]));
        let dir = tempfile::tempdir().unwrap();
        save_frames(std::slice::from_ref(&f), dir.path()).unwrap();
        assert!(dir.path().join("frame_0000.png").exists());
        let back = load_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].image, f.image);
        assert_eq!(count_frames(dir.path()), 1);
    }

    #[test]
    fn mean_abs_diff_counts_channels() {
        let a = Frame::filled(0, 2, 1, [0, 0, 0]);
        let mut b = a.clone();
        b.image.put_pixel(0, 0, Rgb([60, 0, 0]));
        assert!((a.mean_abs_diff(&b) - 10.0).abs() < 1e-12);
    }
}
