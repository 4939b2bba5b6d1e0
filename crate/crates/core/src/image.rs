//! 8-bit raster containers with PNG IO.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Grayscale, &self.data)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Grayscale, &self.data)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, color, data) = read_png(path)?;
        let data = match color {
            png::ColorType::Grayscale => data,
            png::ColorType::Rgb => data.chunks_exact(3).map(|c| c[0]).collect(),
            png::ColorType::GrayscaleAlpha => data.chunks_exact(2).map(|c| c[0]).collect(),
            png::ColorType::Rgba => data.chunks_exact(4).map(|c| c[0]).collect(),
            other => return Err(Error::Format(format!("unsupported png color type {other:?}"))),
        };
        Ok(GrayImage {
            width: w,
            height: h,
            data,
        })
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, color, data) = read_png(path)?;
        let data = match color {
            png::ColorType::Rgb => data,
            png::ColorType::Rgba => data
                .chunks_exact(4)
                .flat_map(|c| [c[0], c[1], c[2]])
                .collect(),
            png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(Error::Format(format!("unsupported png color type {other:?}"))),
        };
        Ok(RgbImage {
            width: w,
            height: h,
            data,
        })
    }

    /// Mean absolute difference per channel sample, in 8-bit units.
    pub fn mean_abs_diff(&self, other: &RgbImage) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("image dimension mismatch"));
        }
        let total: u64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
            .sum();
        Ok(total as f64 / self.data.len() as f64)
    }
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
    }
    Ok(buf)
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let bytes = encode_png(width, height, color, data)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}
