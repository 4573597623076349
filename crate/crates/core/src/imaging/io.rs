//! PGM (P5 and P2) and 8-bit grayscale PNG files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(Error::arg(format!(
                "cannot infer image format of {}; use .pgm or .png",
                path.display()
            ))),
        }
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    load_with_format(path, ImageFormat::from_path(path)?)
}

pub fn load_with_format(path: impl AsRef<Path>, format: ImageFormat) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::Png => decode_png(&bytes),
    }
}

pub fn save(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_with_format(img, path, ImageFormat::from_path(path)?)
}

pub fn save_with_format(img: &GrayImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm(img),
        ImageFormat::Png => encode_png(img)?,
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(
                start,
                if start >= self.bytes.len() {
                    format!("truncated header, expected {what}")
                } else {
                    format!("expected {what}")
                },
            ));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "truncated header, missing magic number"));
    }
    let ascii = match &bytes[..2] {
        b"P5" => false,
        b"P2" => true,
        b"P3" | b"P6" => {
            return Err(Error::UnsupportedImage(
                "color PPM input; convert to grayscale first".into(),
            ))
        }
        _ => return Err(Error::parse(0, "not a PGM file (expected P5 or P2)")),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedImage(format!(
            "maxval {maxval} at byte {maxval_at}; only 8-bit images are supported"
        )));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(maxval_at, "image dimensions overflow"))?;
    let pixels = if ascii {
        let mut px = Vec::with_capacity(count);
        for _ in 0..count {
            let v = cur.number("pixel value")?;
            if v > maxval {
                return Err(Error::parse(cur.pos, format!("pixel value {v} exceeds maxval {maxval}")));
            }
            px.push(v as u8);
        }
        px
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::parse(cur.pos, "truncated header, missing raster separator"));
        }
        let start = cur.pos + 1;
        let raster = &bytes[start..];
        if raster.len() < count {
            return Err(Error::parse(
                bytes.len(),
                format!("raster truncated: expected {count} bytes, found {}", raster.len()),
            ));
        }
        raster[..count].to_vec()
    };
    GrayImage::new(width, height, pixels).map_err(|e| Error::parse(0, e.to_string()))
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    if color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedImage(format!(
            "PNG color type {color:?}; only single-channel grayscale is supported"
        )));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!(
            "PNG bit depth {depth:?}; only 8-bit images are supported"
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    // Rows can carry padding only for sub-byte depths, which are rejected above.
    GrayImage::new(width, height, buf)
}

fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(img.pixels()).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = Prng::new(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.next_u64() as u8).collect()).unwrap()
    }

    #[test]
    fn pgm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(1, 13, 7);
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save(&img, &p).unwrap();
            assert_eq!(load(&p).unwrap(), img);
        }
    }

    #[test]
    fn p5_with_comments_accepted() {
        let mut bytes = b"P5\n# made by hand\n3 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0, 128, 255]);
    }

    #[test]
    fn p2_ascii_accepted() {
        let img = decode_pgm(b"P2\n2 2\n255\n1 2\n3 255\n").unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3, 255]);
    }

    #[test]
    fn truncated_header_reports_offset() {
        match decode_pgm(b"P5\n12 ") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 6);
                assert!(message.contains("height"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        match decode_pgm(b"P5\n2 2\n255\n\x01\x02") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_pgm(b"P"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn non_8bit_and_color_rejected() {
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::UnsupportedImage(_))
        ));
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00"), Err(Error::UnsupportedImage(_))));

        let mut rgb = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut rgb, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        }
        assert!(matches!(decode_png(&rgb), Err(Error::UnsupportedImage(_))));

        let mut deep = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut deep, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[1, 2]).unwrap();
        }
        assert!(matches!(decode_png(&deep), Err(Error::UnsupportedImage(_))));
    }

    #[test]
    fn unknown_extension_rejected() {
        assert!(ImageFormat::from_path(Path::new("x.bmp")).is_err());
        assert_eq!(ImageFormat::from_path(Path::new("x.PNG")).unwrap(), ImageFormat::Png);
    }
}
