use serde::{Deserialize, Serialize};

use super::DepthMap;
use crate::image::GrayImage;

/// Affine 8-bit quantization of radial depth: `p = round((d - d_min) / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCodec {
    pub d_min: f64,
    pub step: f64,
}

impl Default for DepthCodec {
    fn default() -> Self {
        DepthCodec {
            d_min: 12.23,
            step: 0.0182,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDepth {
    pub image: GrayImage,
    pub saturated_low: usize,
    pub saturated_high: usize,
}

/// Sidecar stored next to depth PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub codec: DepthCodec,
    pub r_nominal: f64,
    pub width: usize,
    pub height: usize,
    pub units: String,
}

impl DepthCodec {
    /// Largest depth representable by pixel 255.
    pub fn max_depth(&self) -> f64 {
        self.decode_value(255)
    }

    /// Encoded pixel plus -1/0/+1 for low/none/high saturation.
    pub fn encode_value(&self, d: f64) -> (u8, i8) {
        let p = ((d - self.d_min) / self.step).round();
        if p < 0.0 || p.is_nan() {
            (0, -1)
        } else if p > 255.0 {
            (255, 1)
        } else {
            (p as u8, 0)
        }
    }

    pub fn decode_value(&self, p: u8) -> f64 {
        self.d_min + p as f64 * self.step
    }

    pub fn encode(&self, depth: &DepthMap) -> EncodedDepth {
        let mut lo = 0;
        let mut hi = 0;
        let data = depth
            .values
            .iter()
            .map(|&d| {
                let (p, s) = self.encode_value(d);
                match s {
                    -1 => lo += 1,
                    1 => hi += 1,
                    _ => {}
                }
                p
            })
            .collect();
        EncodedDepth {
            image: GrayImage {
                width: depth.width,
                height: depth.height,
                data,
            },
            saturated_low: lo,
            saturated_high: hi,
        }
    }

    pub fn decode(&self, img: &GrayImage) -> DepthMap {
        DepthMap {
            width: img.width,
            height: img.height,
            values: img.data.iter().map(|&p| self.decode_value(p)).collect(),
        }
    }
}
