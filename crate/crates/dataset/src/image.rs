use std::io::Write;
use std::path::Path;

use crate::error::{io_err, DatasetError, Result};

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub type Rgb = [u8; 3];

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Image { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    /// Ellipse inscribed in the given rectangle.
    pub fn fill_ellipse(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        let (cx, cy) = (x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0);
        let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
        for yy in y..y + h {
            for xx in x..x + w {
                let dx = (xx as f64 + 0.5 - cx) / rx;
                let dy = (yy as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.put(xx, yy, c);
                }
            }
        }
    }

    /// Copies the pixels under a box; the box must lie inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Image {
        assert!(w > 0 && h > 0 && x + w <= self.width && y + h <= self.height, "crop outside image");
        let mut data = Vec::with_capacity(w * h * 3);
        for yy in y..y + h {
            let row = (yy * self.width + x) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Image { width: w, height: h, data }
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height, [0; 3]);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.put(x as i64, y as i64, self.get(sx, sy));
            }
        }
        out
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P6" {
            return Err(format!("expected P6, found {}", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        if width == 0 || height == 0 {
            return Err("zero-sized image".into());
        }
        let len = width * height * 3;
        if bytes.len() < pos || bytes.len() - pos != len {
            return Err(format!("expected {len} pixel bytes"));
        }
        Ok(Image { width, height, data: bytes[pos..].to_vec() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_ppm()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Image::from_ppm(&bytes).map_err(|detail| DatasetError::Image { path: path.into(), detail })
    }
}

pub fn gray_pgm(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(5, 3, [1, 2, 3]);
        img.fill_rect(1, 1, 2, 1, [200, 0, 7]);
        assert_eq!(Image::from_ppm(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn ppm_header_comments() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7]);
        assert_eq!(Image::from_ppm(&bytes).unwrap().get(0, 0), [9, 8, 7]);
        assert!(Image::from_ppm(b"P6\n1 1\n255\n\x01").is_err());
        assert!(Image::from_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn resize_doubles_pixels() {
        let mut img = Image::new(2, 1, [0; 3]);
        img.put(1, 0, [255; 3]);
        let big = img.resize(4, 2);
        assert_eq!(big.get(1, 1), [0; 3]);
        assert_eq!(big.get(2, 0), [255; 3]);
    }
}
