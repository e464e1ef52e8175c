//! Raster image type shared by the augmentation, corruption, dataset, and
//! training modules.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Value used for pixels exposed by geometric transforms.
pub const FILL_GRAY: f64 = 0.5;

/// H x W x C raster with values in `[0, 1]`, row-major `(h, w, c)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds an image, validating shape and value range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[(h * self.width + w) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, value: f64) {
        self.data[(h * self.width + w) * self.channels + c] = value;
    }

    /// Replaces the pixel buffer, clipping every value into `[0, 1]`.
    /// Shape must be preserved by the caller.
    pub fn with_clipped_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Samples channel `c` at continuous coordinates `(y, x)` with bilinear
    /// interpolation; out-of-bounds reads return [`FILL_GRAY`].
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let read = |hy: i64, wx: i64| -> f64 {
            if hy < 0 || wx < 0 || hy >= self.height as i64 || wx >= self.width as i64 {
                FILL_GRAY
            } else {
                self.get(hy as usize, wx as usize, c)
            }
        };
        let y0 = y.floor();
        let x0 = x.floor();
        let dy = y - y0;
        let dx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let top = read(y0, x0) * (1.0 - dx) + read(y0, x0 + 1) * dx;
        let bot = read(y0 + 1, x0) * (1.0 - dx) + read(y0 + 1, x0 + 1) * dx;
        top * (1.0 - dy) + bot * dy
    }

    /// Left-right mirror.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for h in 0..self.height {
            for w in 0..self.width {
                for c in 0..self.channels {
                    out.set(h, w, c, self.get(h, self.width - 1 - w, c));
                }
            }
        }
        out
    }

    /// Serializes as binary PPM (P6, 8-bit). Grayscale images are written
    /// with the gray value replicated across R, G, B.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 3 + 32);
        out.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for h in 0..self.height {
            for w in 0..self.width {
                for c in 0..3 {
                    let src = if self.channels == 1 { 0 } else { c };
                    let v = (self.get(h, w, src) * 255.0).round().clamp(0.0, 255.0) as u8;
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let bytes = self.to_ppm_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a binary PPM (P6, 8-bit) file as a 3-channel image.
    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_ppm_bytes(&bytes).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::parse(path, "header", msg),
            other => other,
        })
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut token = || -> Result<String> {
            while pos < bytes.len() {
                // skip whitespace and '#' comment lines
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated ppm header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        if magic != "P6" {
            return Err(Error::invalid(format!("expected P6 magic, got {magic}")));
        }
        let width: usize = token()?
            .parse()
            .map_err(|_| Error::invalid("bad ppm width"))?;
        let height: usize = token()?
            .parse()
            .map_err(|_| Error::invalid("bad ppm height"))?;
        let maxval: usize = token()?
            .parse()
            .map_err(|_| Error::invalid("bad ppm maxval"))?;
        if maxval != 255 {
            return Err(Error::invalid(format!("only 8-bit ppm supported, maxval {maxval}")));
        }
        let body = pos + 1; // single whitespace byte after maxval
        let need = width * height * 3;
        if bytes.len() < body + need {
            return Err(Error::invalid(format!(
                "ppm body too short: need {need} bytes, have {}",
                bytes.len().saturating_sub(body)
            )));
        }
        let data = bytes[body..body + need]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        ImageTensor::new(height, width, 3, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![-0.1]).is_err());
        assert!(ImageTensor::new(2, 2, 1, vec![0.5; 4]).is_ok());
    }

    #[test]
    fn bilinear_identity_on_grid_points() {
        let img = ImageTensor::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.sample_bilinear(0.0, 1.0, 0), 0.2);
        assert_eq!(img.sample_bilinear(1.0, 0.0, 0), 0.3);
        // out of bounds reads gray
        assert_eq!(img.sample_bilinear(-5.0, 0.0, 0), FILL_GRAY);
    }

    #[test]
    fn flip_is_involution() {
        let img = ImageTensor::new(2, 3, 1, (0..6).map(|v| v as f64 / 10.0).collect()).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(0, 0, 0), img.get(0, 2, 0));
    }

    #[test]
    fn ppm_round_trip() {
        let img = ImageTensor::new(2, 2, 3, (0..12).map(|v| v as f64 / 11.0).collect()).unwrap();
        let back = ImageTensor::from_ppm_bytes(&img.to_ppm_bytes()).unwrap();
        assert_eq!(back.shape(), (2, 2, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-12);
        }
        // byte-exact re-encode
        assert_eq!(back.to_ppm_bytes(), img.to_ppm_bytes());
    }
}
