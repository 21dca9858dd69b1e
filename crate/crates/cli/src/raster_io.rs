//! Mask and image files (8-bit PNG and binary PGM).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use polytrace::pyramid::ImageRaster;
use polytrace::MaskRaster;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unsupported-raster: {0}")]
    Unsupported(String),
    #[error("{path}: {message}")]
    Decode { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterIoError + '_ {
    move |source| RasterIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn decode(path: &Path) -> Result<DynamicImage, RasterIoError> {
    let reader = ImageReader::open(path).map_err(io_err(path))?.with_guessed_format().map_err(io_err(path))?;
    if reader.format().is_none() {
        return Err(RasterIoError::Unsupported(format!("{}: unrecognised file format", path.display())));
    }
    reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => RasterIoError::Unsupported(format!("{}: {u}", path.display())),
        other => RasterIoError::Decode {
            path: path.display().to_string(),
            message: other.to_string(),
        },
    })
}

/// Reads a single-channel 8-bit mask; pixel values are class ids.
pub fn read_mask(path: &Path) -> Result<MaskRaster, RasterIoError> {
    match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(MaskRaster::from_labels(w as usize, h as usize, buf.into_raw()).expect("buffer matches dimensions"))
        }
        other => Err(RasterIoError::Unsupported(format!(
            "{}: {:?} (expected 8-bit single channel)",
            path.display(),
            other.color()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Png,
    Pgm,
}

fn kind_of(path: &Path) -> Result<FileKind, RasterIoError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(FileKind::Png),
        Some("pgm") => Ok(FileKind::Pgm),
        _ => Err(RasterIoError::Unsupported(format!(
            "{}: output must end in .png or .pgm",
            path.display()
        ))),
    }
}

fn encode(path: &Path, bytes: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<(), RasterIoError> {
    let kind = kind_of(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let out = BufWriter::new(file);
    let res = match kind {
        FileKind::Png => PngEncoder::new(out).write_image(bytes, width as u32, height as u32, color),
        FileKind::Pgm => {
            if color != ExtendedColorType::L8 {
                return Err(RasterIoError::Unsupported("PGM output holds a single channel".into()));
            }
            PnmEncoder::new(out)
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(bytes, width as u32, height as u32, color)
        }
    };
    res.map_err(|e| RasterIoError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes a mask as grayscale PNG or binary PGM, chosen by extension.
pub fn write_mask(mask: &MaskRaster, path: &Path) -> Result<(), RasterIoError> {
    encode(path, mask.labels(), mask.width(), mask.height(), ExtendedColorType::L8)
}

/// Reads an 8-bit image with 1 to 4 channels.
pub fn read_image(path: &Path) -> Result<ImageRaster, RasterIoError> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        other => {
            return Err(RasterIoError::Unsupported(format!(
                "{}: {:?} (expected 8 bits per sample)",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(ImageRaster::new(w, h, channels, data).expect("buffer matches dimensions"))
}

pub fn write_image(img: &ImageRaster, path: &Path) -> Result<(), RasterIoError> {
    use polytrace::pyramid::PixelGrid;
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        2 => ExtendedColorType::La8,
        3 => ExtendedColorType::Rgb8,
        4 => ExtendedColorType::Rgba8,
        c => return Err(RasterIoError::Unsupported(format!("{c} channels"))),
    };
    encode(path, img.data(), img.width(), img.height(), color)
}
