//! Dataset construction: PSNR ring-buffer filtering, JSONL manifests,
//! simulated collection runs and held-out-indenter splits.

mod build;
mod manifest;

pub use build::{
    build_dataset, build_dataset_with_rig, indenter_library, place_indenter, render_reference, simulate_frame, IndenterKind, IndenterSpec, SensorConfig,
    SensorRig, SimFrame, SimulationPlan,
};
pub use manifest::{split, FrameRecord, Manifest, ManifestHeader, Units};

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// Cap reported for identical images, in dB.
pub const PSNR_CAP_DB: f64 = 99.0;
/// PSNR that maps to similarity 1.0.
pub const SIMILARITY_FULL_SCALE_DB: f64 = 50.0;
pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const RING_CAPACITY: usize = 5;

/// 8-bit raster accessor shared by gray and RGB frames.
pub trait Raster {
    fn dims(&self) -> (usize, usize, usize);
    fn bytes(&self) -> &[u8];
}

impl Raster for RgbImage {
    fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, 3)
    }
    fn bytes(&self) -> &[u8] {
        &self.data
    }
}

impl Raster for GrayImage {
    fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, 1)
    }
    fn bytes(&self) -> &[u8] {
        &self.data
    }
}

/// `10 log10(255^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<R: Raster>(a: &R, b: &R) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "psnr of differently sized images {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let sq: u64 = a
        .bytes()
        .iter()
        .zip(b.bytes())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sq == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sq as f64 / a.bytes().len() as f64;
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// `clamp(psnr / 50 dB, 0, 1)`.
pub fn similarity<R: Raster>(a: &R, b: &R) -> Result<f64> {
    Ok(similarity_from_db(psnr(a, b)?))
}

pub fn similarity_from_db(db: f64) -> f64 {
    (db / SIMILARITY_FULL_SCALE_DB).clamp(0.0, 1.0)
}

/// Fixed-capacity FIFO of the most recently kept frames.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        RingBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

/// Stateful duplicate filter: a frame is kept when it is less than
/// `threshold`-similar to every buffered frame.
#[derive(Debug, Clone)]
pub struct FrameFilter<R: Raster + Clone> {
    buffer: RingBuffer<R>,
    threshold: f64,
}

impl<R: Raster + Clone> FrameFilter<R> {
    pub fn new(threshold: f64) -> Self {
        FrameFilter {
            buffer: RingBuffer::new(RING_CAPACITY),
            threshold,
        }
    }

    pub fn offer(&mut self, frame: &R) -> Result<bool> {
        for b in self.buffer.iter() {
            if similarity(frame, b)? >= self.threshold {
                return Ok(false);
            }
        }
        self.buffer.push(frame.clone());
        Ok(true)
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }
}

/// Indices of the frames kept by the ring-buffer filter, in stream order.
pub fn filter_stream<R: Raster + Clone>(frames: &[R], threshold: f64) -> Result<Vec<usize>> {
    if let Some(first) = frames.first() {
        if frames.iter().any(|f| f.dims() != first.dims()) {
            return Err(Error::invalid("filter_stream needs uniformly sized frames"));
        }
    }
    let mut filter = FrameFilter::new(threshold);
    let mut kept = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if filter.offer(f)? {
            kept.push(i);
        }
    }
    Ok(kept)
}
