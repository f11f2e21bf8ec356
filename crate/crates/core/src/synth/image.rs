//! 8-bit planar images and binary masks with binary PPM/PGM I/O.
//! Values are stored quantized, so a write/read cycle is exact.

use std::fs;
use std::path::Path;

use tamperscope_tensor::{Float, Tensor};

use crate::error::{CoreError, Result};

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Planar `channels × height × width` image with values `k / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(quantize(f(c, y, x)));
                }
            }
        }
        Image {
            channels,
            height,
            width,
            data,
        }
    }

    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)] as f64 / 255.0
    }

    pub fn raw(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.idx(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = quantize(v);
    }

    pub fn set_raw(&mut self, c: usize, y: usize, x: usize, v: u8) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / (255.0 * self.data.len() as f64)
    }

    /// `[channels, height, width]` with values in `[0, 1]`.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.channels, self.height, self.width], |i| T::of(self.data[i] as f64 / 255.0))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        let mut out = Image::new(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    out.set_raw(c, y, x, self.raw(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Side-by-side concatenation; heights and channel counts must match.
    pub fn hconcat(left: &Image, right: &Image) -> Result<Image> {
        if left.height != right.height || left.channels != right.channels {
            return Err(CoreError::BadParameter("hconcat needs equal heights and channels".into()));
        }
        let mut out = Image::new(left.channels, left.height, left.width + right.width);
        for c in 0..left.channels {
            for y in 0..left.height {
                for x in 0..out.width {
                    let v = if x < left.width { left.raw(c, y, x) } else { right.raw(c, y, x - left.width) };
                    out.set_raw(c, y, x, v);
                }
            }
        }
        Ok(out)
    }

    /// Top-over-bottom concatenation; widths and channel counts must match.
    pub fn vconcat(top: &Image, bottom: &Image) -> Result<Image> {
        if top.width != bottom.width || top.channels != bottom.channels {
            return Err(CoreError::BadParameter("vconcat needs equal widths and channels".into()));
        }
        let mut out = Image::new(top.channels, top.height + bottom.height, top.width);
        for c in 0..top.channels {
            for y in 0..out.height {
                for x in 0..top.width {
                    let v = if y < top.height { top.raw(c, y, x) } else { bottom.raw(c, y - top.height, x) };
                    out.set_raw(c, y, x, v);
                }
            }
        }
        Ok(out)
    }

    /// Half-pixel-center bilinear resize.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ty = tamperscope_tensor::bilinear_taps(self.height, height);
        let tx = tamperscope_tensor::bilinear_taps(self.width, width);
        Image::from_fn(self.channels, height, width, |c, y, x| {
            let (y0, y1, wy0, wy1) = ty[y];
            let (x0, x1, wx0, wx1) = tx[x];
            wy0 * (wx0 * self.get(c, y0, x0) + wx1 * self.get(c, y0, x1)) + wy1 * (wx0 * self.get(c, y1, x0) + wx1 * self.get(c, y1, x1))
        })
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let (magic, c) = match self.channels {
            1 => ("P5", 1),
            3 => ("P6", 3),
            n => return Err(CoreError::BadParameter(format!("cannot write {n}-channel image"))),
        };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        for y in 0..self.height {
            for x in 0..self.width {
                for ch in 0..c {
                    bytes.push(self.raw(ch, y, x));
                }
            }
        }
        fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
    }

    pub fn read_pnm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        parse_pnm(&bytes)
    }
}

fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CoreError::BadImage("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte after maxval
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(CoreError::BadImage(format!("unsupported magic {other}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| CoreError::BadImage(format!("bad header field {s}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(CoreError::BadImage(format!("maxval {maxval} unsupported")));
    }
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(CoreError::BadImage("truncated pixel data".into()));
    }
    let payload = &bytes[pos..pos + need];
    let mut img = Image::new(channels, height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                img.set_raw(c, y, x, payload[(y * width + x) * channels + c]);
            }
        }
    }
    Ok(img)
}

/// Binary mask, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, width: usize, height: usize) {
        for y in y0..y0 + height {
            for x in x0..x0 + width {
                self.set(y, x, true);
            }
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| (a | b).min(1)).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Mask {
        let mut out = Mask::new(height, width);
        for y in 0..height {
            for x in 0..width {
                out.set(y, x, self.get(y0 + y, x0 + x));
            }
        }
        out
    }

    /// Nearest-neighbor resize.
    pub fn resize(&self, height: usize, width: usize) -> Mask {
        let mut out = Mask::new(height, width);
        for y in 0..height {
            for x in 0..width {
                let sy = (y * self.height) / height;
                let sx = (x * self.width) / width;
                out.set(y, x, self.get(sy, sx));
            }
        }
        out
    }

    /// `[1, height, width]` of zeros and ones.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| if self.data[i] != 0 { T::one() } else { T::zero() })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let img = Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        };
        img.write_pnm(path)
    }

    pub fn read_pgm(path: &Path) -> Result<Mask> {
        let img = Image::read_pnm(path)?;
        if img.channels != 1 {
            return Err(CoreError::BadImage(format!("{}: mask must be single-channel", path.display())));
        }
        Ok(Mask {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| (v >= 128) as u8).collect(),
        })
    }
}
