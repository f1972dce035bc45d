//! PNG decoding into [`Image`].
//!
//! Accepted: 1/2/4/8/16-bit grayscale, 8/16-bit RGB, and palette images
//! without transparency (expanded to RGB). 16-bit samples keep their high
//! byte. Anything carrying alpha is rejected.

use std::path::Path;

use lungline_core::preprocess::Image;
use png::{ColorType, Transformations};

use crate::error::{Error, Result};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("malformed PNG: {0}")]
    Decode(String),
    #[error("unsupported PNG: {0}")]
    Unsupported(String),
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    let (color, _) = reader.output_color_type();
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        ColorType::GrayscaleAlpha | ColorType::Rgba => {
            return Err(ImageError::Unsupported(format!(
                "{:?} (source {:?}) carries transparency",
                color,
                reader.info().color_type
            )))
        }
        ColorType::Indexed => {
            return Err(ImageError::Unsupported("palette was not expanded".into()))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Image::new(frame.width as usize, frame.height as usize, channels, buf)
        .map_err(|e| ImageError::Decode(e.to_string()))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes an 8-bit grayscale or RGB image.
pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 1 {
            ColorType::Grayscale
        } else {
            ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("writing to a Vec cannot fail");
        w.write_image_data(img.pixels())
            .expect("buffer length matches the header");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(w: u32, h: u32, color: ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut wr = enc.write_header().unwrap();
            wr.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn single_pixels() {
        let white = encode(1, 1, ColorType::Grayscale, png::BitDepth::Eight, &[255]);
        let black = encode(1, 1, ColorType::Grayscale, png::BitDepth::Eight, &[0]);
        assert_eq!(decode_image(&white).unwrap().pixels(), &[255]);
        assert_eq!(decode_image(&black).unwrap().pixels(), &[0]);
    }

    #[test]
    fn sixteen_bit_keeps_the_high_byte() {
        let img = encode(
            2,
            1,
            ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &[0x12, 0xff, 0xab, 0x01],
        );
        assert_eq!(decode_image(&img).unwrap().pixels(), &[0x12, 0xab]);
    }

    #[test]
    fn rgb_and_round_trip() {
        let src = Image::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(decode_image(&encode_png(&src)).unwrap(), src);
    }

    #[test]
    fn alpha_is_unsupported() {
        let img = encode(1, 1, ColorType::Rgba, png::BitDepth::Eight, &[1, 2, 3, 4]);
        assert!(matches!(
            decode_image(&img),
            Err(ImageError::Unsupported(_))
        ));
    }

    #[test]
    fn truncated_file_is_a_decode_error() {
        let img = encode(8, 8, ColorType::Grayscale, png::BitDepth::Eight, &[7; 64]);
        for cut in [0, 8, 20, img.len() - 13] {
            assert!(
                matches!(decode_image(&img[..cut]), Err(ImageError::Decode(_))),
                "cut at {cut}"
            );
        }
    }
}
