use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::Image;
use crate::error::{Error, Result};

/// Load an 8-bit PNG or binary PPM/PGM. Grayscale files yield one channel,
/// everything else is converted to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Image::from_u8(h, w, 1, g.as_raw()),
        other => Image::from_u8(h, w, 3, other.to_rgb8().as_raw()),
    }
}

/// Save as 8-bit; the format follows the file extension (`.png`, `.ppm`, `.pgm`).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let codes = img.to_u8();
    let err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    if img.channels() == 1 {
        GrayImage::from_raw(w, h, codes)
            .expect("buffer size matches dims")
            .save(path)
            .map_err(err)
    } else {
        RgbImage::from_raw(w, h, codes)
            .expect("buffer size matches dims")
            .save(path)
            .map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip_codes() {
        let dir = tempfile::tempdir().unwrap();
        let codes: Vec<u8> = (0..8 * 10 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = Image::from_u8(8, 10, 3, &codes).unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back.to_u8(), codes);
        }
        let gray = Image::from_u8(8, 8, 1, &[9u8; 64]).unwrap();
        let p = dir.path().join("g.png");
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap().channels(), 1);
    }

    #[test]
    fn missing_file_is_error() {
        assert!(load_image("/nonexistent/x.png").is_err());
    }
}
