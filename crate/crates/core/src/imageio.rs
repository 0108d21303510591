//! 8-bit PNG and binary PPM input/output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an RGB image as a `3×H×W` tensor with values in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = f32::from(raw[3 * i + c]) / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaves a `C×H×W` tensor (C = 1 or 3) into 8-bit samples.
pub fn to_bytes<T: Real>(t: &Tensor<T>) -> Result<(u32, u32, Vec<u8>)> {
    let (c, h, w) = match t.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        &[h, w] => (1, h, w),
        s => return Err(Error::dim(format!("cannot write a tensor of shape {s:?} as an image"))),
    };
    let n = h * w;
    let d = t.data();
    let mut out = Vec::with_capacity(c * n);
    for i in 0..n {
        for ch in 0..c {
            out.push(to_u8(d[ch * n + i].as_f64()));
        }
    }
    Ok((w as u32, h as u32, out))
}

/// Writes a 1- or 3-channel tensor; the extension selects PPM (`.ppm`,
/// `.pgm`) or PNG (anything else).
pub fn write_image<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, bytes) = to_bytes(t)?;
    let color = if bytes.len() == (w * h) as usize {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ImageFormat::from_extension(ext.as_deref().unwrap_or("png")) {
        Some(ImageFormat::Pnm) => {
            let sub = if color == ExtendedColorType::L8 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(out)
                .with_subtype(sub)
                .write_image(&bytes, w, h, color)
                .map_err(|e| image_err(path, e))
        }
        _ => image::codecs::png::PngEncoder::new(out)
            .write_image(&bytes, w, h, color)
            .map_err(|e| image_err(path, e)),
    }
}

/// True for file names this module can read.
pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_roundtrip_exactly_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::<f32>::from_fn(&[3, 5, 7], |i| ((i * 37) % 256) as f32 / 255.0);
        for name in ["a.png", "b.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
        let ppm = std::fs::read(dir.path().join("b.ppm")).unwrap();
        assert_eq!(&ppm[..2], b"P6");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(read_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }
}
