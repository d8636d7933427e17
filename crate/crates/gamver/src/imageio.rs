//! Grayscale raster IO: binary PGM (8/16-bit) and 8-bit grayscale PNG.

use std::io::Cursor;
use std::path::Path;

use gamver_core::Image;
use image::{DynamicImage, ImageFormat};

use crate::error::CliError;

pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}

pub fn load_image(path: &Path) -> Result<Image, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decodes PGM or PNG bytes; `path` is only used in error messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image, CliError> {
    let format = image::guess_format(bytes).map_err(|e| CliError::format(path, e.to_string()))?;
    if !matches!(format, ImageFormat::Pnm | ImageFormat::Png) {
        return Err(CliError::format(path, format!("unsupported image format {format:?}")));
    }
    if format == ImageFormat::Pnm && !bytes.starts_with(b"P5") {
        return Err(CliError::format(path, "only binary PGM (P5) is supported"));
    }
    let decoded = image::load(Cursor::new(bytes), format).map_err(|e| CliError::format(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(CliError::format(path, "zero-sized image"));
    }
    let image = match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let levels: Vec<u32> = buf.into_raw().into_iter().map(u32::from).collect();
            Image::from_levels(h, w, &levels, u8::MAX as u32)
        }
        DynamicImage::ImageLuma16(buf) if format == ImageFormat::Pnm => {
            let levels: Vec<u32> = buf.into_raw().into_iter().map(u32::from).collect();
            Image::from_levels(h, w, &levels, u16::MAX as u32)
        }
        DynamicImage::ImageLuma16(_) => return Err(CliError::format(path, "only 8-bit grayscale PNG is supported")),
        other => {
            return Err(CliError::format(
                path,
                format!("colour or alpha images are rejected, got {:?}", other.color()),
            ))
        }
    };
    image.map_err(|e| CliError::format(path, e.to_string()))
}

/// Writes an 8-bit binary PGM.
pub fn save_pgm(path: &Path, image: &Image) -> Result<(), CliError> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_u8());
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Writes an 8-bit RGB PNG from interleaved `rgb` bytes.
pub fn save_png_rgb(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<(), CliError> {
    let buf = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| CliError::format(path, "pixel buffer does not match image size"))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| CliError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("x.pgm")
    }

    fn pgm8(w: usize, h: usize, max: u32, data: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n{max}\n").into_bytes();
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn eight_bit_levels() {
        let img = decode_image(&pgm8(3, 1, 255, &[255, 0, 128]), &p()).unwrap();
        assert_eq!(img.pixels().values()[0], 1.0);
        assert_eq!(img.pixels().values()[1], 0.0);
        assert_eq!(img.pixels().values()[2], 128.0 / 255.0);
    }

    #[test]
    fn sixteen_bit_pgm() {
        let mut v = b"P5\n2 1\n65535\n".to_vec();
        v.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let img = decode_image(&v, &p()).unwrap();
        assert_eq!(img.pixels().values(), &[1.0, 32768.0 / 65535.0]);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = decode_image(&pgm8(2, 2, 255, &[0, 64, 128, 255]), &p()).unwrap();
        save_pgm(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn rejects_colour_and_ascii() {
        let mut ppm = b"P6\n1 1\n255\n".to_vec();
        ppm.extend_from_slice(&[1, 2, 3]);
        assert!(decode_image(&ppm, &p()).is_err());
        assert!(decode_image(b"P2\n1 1\n255\n7\n", &p()).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        save_png_rgb(&path, 1, 1, vec![1, 2, 3]).unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("c.png"), "{err}");
    }

    #[test]
    fn gray_png_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixels().values(), &[0.0, 1.0]);
    }
}
