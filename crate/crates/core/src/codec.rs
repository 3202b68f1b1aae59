//! PNG and JPEG I/O for [`Image8`]. Only 8-bit gray and RGB are accepted.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image8;

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode { path: path.to_path_buf(), reason: reason.into() }
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<Image8, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("{}-bit PNGs are not supported (8-bit only)", info.bit_depth as u8));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Indexed => return Err("palette PNGs are not supported".into()),
        other => return Err(format!("PNG color type {other:?} is not supported (gray or RGB only)")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(frame.buffer_size());
    Image8::new(w, h, channels, buf).map_err(|e| e.to_string())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_png(&bytes).map_err(|reason| decode_err(path, reason))
}

pub fn read_jpeg(path: impl AsRef<Path>) -> Result<Image8> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)?.with_guessed_format().map_err(|e| decode_err(path, e.to_string()))?;
    let img = reader.decode().map_err(|e| decode_err(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            Image8::new(w as usize, h as usize, 3, rgb.into_raw())
        }
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Image8::new(w as usize, h as usize, 1, g.into_raw())
        }
        other => Err(decode_err(path, format!("unsupported JPEG color type {:?}", other.color()))),
    }
}

/// Reads a PNG or JPEG, dispatching on the file extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image8> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("png") => read_png(path),
        Some("jpg" | "jpeg") => read_jpeg(path),
        _ => Err(decode_err(path, "unrecognized image extension (expected .png, .jpg or .jpeg)")),
    }
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("png" | "jpg" | "jpeg"))
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

pub fn encode_png_to(img: &Image8, writer: impl Write) -> Result<()> {
    let mut encoder = png::Encoder::new(writer, img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Fast);
    let mut w = encoder.write_header().map_err(png_to_io)?;
    w.write_image_data(img.data()).map_err(png_to_io)?;
    w.finish().map_err(png_to_io)?;
    Ok(())
}

fn png_to_io(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(other.to_string())),
    }
}

pub fn encode_png(img: &Image8) -> Vec<u8> {
    let mut out = Vec::new();
    encode_png_to(img, &mut out).expect("in-memory PNG encoding cannot fail");
    out
}

pub fn write_png(path: impl AsRef<Path>, img: &Image8) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_png_to(img, &mut w)?;
    w.flush()?;
    Ok(())
}
