use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FrameImage;

/// Reads an 8-bit PNG as a gray (1-channel) or RGB (3-channel) raster.
/// Palette, 16-bit and alpha inputs are normalized on the way in.
pub fn read_png(path: &Path, index: usize) -> Result<FrameImage> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, pixels) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Rgba => (3, buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        png::ColorType::Indexed => {
            return Err(Error::Image(format!("{}: unexpanded palette image", path.display())))
        }
    };
    FrameImage::new(index, w, h, channels, pixels)
}

pub fn write_png(image: &FrameImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(if image.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&image.pixels)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
