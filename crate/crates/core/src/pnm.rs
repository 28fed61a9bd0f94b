//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use crate::empirical::ImageTensor;
use crate::error::{Error, Result};

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

/// Reads a P5 or P6 file with samples mapped to `[0, 1]` (`/255`, after
/// the decoder rescales a smaller maxval to 255).
pub fn read_pnm(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|msg| Error::parse(file_name(path), msg))
}

pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<ImageTensor, String> {
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let channels = match decoder.subtype() {
        PnmSubtype::Graymap(SampleEncoding::Binary) => 1,
        PnmSubtype::Pixmap(SampleEncoding::Binary) => 3,
        other => return Err(format!("unsupported PNM subtype {other:?}; expected binary P5 or P6")),
    };
    let header = decoder.header();
    if header.maximal_sample() > 255 {
        return Err(format!("maxval {} exceeds 255", header.maximal_sample()));
    }
    let (width, height) = (header.width() as usize, header.height() as usize);
    let mut raster = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut raster).map_err(|e| e.to_string())?;
    let pixels = raster.iter().map(|&b| b as f64 / 255.0).collect();
    ImageTensor::new(width, height, channels, pixels).map_err(|e| e.to_string())
}

/// Encodes with maxval 255, rounding `v * 255` to the nearest integer.
pub fn encode_pnm(img: &ImageTensor) -> Result<Vec<u8>> {
    let (subtype, color) = if img.channels() == 1 {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    } else {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    };
    let raster: Vec<u8> = img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&raster, img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::BadParameter(format!("cannot encode image: {e}")))?;
    Ok(out)
}

pub fn write_pnm(path: &Path, img: &ImageTensor) -> Result<()> {
    std::fs::write(path, encode_pnm(img)?).map_err(|e| Error::io(path, e))
}

/// Image files (`.ppm`, `.pgm`, `.pnm`) in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm")) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
