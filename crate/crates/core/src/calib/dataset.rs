use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Manifest;
use crate::error::{Error, Result};
use crate::gelsim::DepthCodec;
use crate::image::RgbImage;
use crate::neural::{Task, Tensor};
use crate::wrench::WrenchRanges;

/// Training samples kept as bytes and converted per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub size: usize,
    /// 3 for the frame alone, 6 with the reference frame first.
    pub channels: usize,
    /// Interleaved RGB per sample.
    images: Vec<u8>,
    reference: Option<Vec<u8>>,
    /// Depth pixels (depth task) or normalized wrenches (wrench task).
    depth: Vec<u8>,
    wrench: Vec<[f64; 6]>,
    pub ids: Vec<String>,
    pub sensor_id: String,
    pub codec: DepthCodec,
    pub ranges: WrenchRanges,
}

impl Dataset {
    pub fn from_manifest(m: &Manifest, task: Task, with_reference: bool) -> Result<Dataset> {
        Dataset::from_manifest_with_ranges(m, task, with_reference, m.header.wrench_ranges)
    }

    /// Loads a manifest, normalizing wrenches with `ranges`.
    pub fn from_manifest_with_ranges(m: &Manifest, task: Task, with_reference: bool, ranges: WrenchRanges) -> Result<Dataset> {
        let [w, h] = m.header.image_size;
        if w != h {
            return Err(Error::invalid("training needs square frames"));
        }
        let reference = if with_reference {
            let r = m
                .load_reference()?
                .ok_or_else(|| Error::invalid("manifest has no undeflected reference frame"))?;
            if (r.width, r.height) != (w, h) {
                return Err(Error::invalid("reference frame size does not match the frames"));
            }
            Some(r.data)
        } else {
            None
        };
        let mut ds = Dataset {
            task,
            size: w,
            channels: if with_reference { 6 } else { 3 },
            images: Vec::with_capacity(m.len() * w * h * 3),
            reference,
            depth: Vec::new(),
            wrench: Vec::new(),
            ids: Vec::new(),
            sensor_id: m.header.sensor_id.clone(),
            codec: m.header.codec,
            ranges,
        };
        for r in &m.records {
            let img = m.load_image(r)?;
            if (img.width, img.height) != (w, h) {
                return Err(Error::Format(format!("{} has the wrong size", r.image)));
            }
            match task {
                Task::Depth => {
                    let d = m
                        .load_depth(r)?
                        .ok_or_else(|| Error::invalid(format!("record {} has no depth target", r.id)))?;
                    if (d.width, d.height) != (w, h) {
                        return Err(Error::Format(format!("depth of {} has the wrong size", r.id)));
                    }
                    ds.depth.extend_from_slice(&d.data);
                }
                Task::Wrench => {
                    let wr = r
                        .wrench()
                        .ok_or_else(|| Error::invalid(format!("record {} has no wrench target", r.id)))?;
                    ds.wrench.push(ranges.normalize(&wr).values);
                }
            }
            ds.images.extend_from_slice(&img.data);
            ds.ids.push(r.id.clone());
        }
        Ok(ds)
    }

    /// In-memory dataset from frames and depth pixel maps.
    pub fn from_depth_frames(frames: &[RgbImage], depth: &[Vec<u8>], codec: DepthCodec) -> Result<Dataset> {
        let size = frames.first().map_or(0, |f| f.width);
        let mut ds = Dataset::empty(Task::Depth, size, codec, WrenchRanges::default());
        for (f, d) in frames.iter().zip(depth) {
            if f.width != size || f.height != size || d.len() != size * size {
                return Err(Error::invalid("frames must be square and uniformly sized"));
            }
            ds.images.extend_from_slice(&f.data);
            ds.depth.extend_from_slice(d);
            ds.ids.push(format!("{}", ds.ids.len()));
        }
        Ok(ds)
    }

    /// In-memory dataset from frames and normalized wrenches.
    pub fn from_wrench_frames(frames: &[RgbImage], targets: &[[f64; 6]], ranges: WrenchRanges) -> Result<Dataset> {
        let size = frames.first().map_or(0, |f| f.width);
        let mut ds = Dataset::empty(Task::Wrench, size, DepthCodec::default(), ranges);
        for (f, t) in frames.iter().zip(targets) {
            if f.width != size || f.height != size {
                return Err(Error::invalid("frames must be square and uniformly sized"));
            }
            ds.images.extend_from_slice(&f.data);
            ds.wrench.push(*t);
            ds.ids.push(format!("{}", ds.ids.len()));
        }
        Ok(ds)
    }

    fn empty(task: Task, size: usize, codec: DepthCodec, ranges: WrenchRanges) -> Dataset {
        Dataset {
            task,
            size,
            channels: 3,
            images: Vec::new(),
            reference: None,
            depth: Vec::new(),
            wrench: Vec::new(),
            ids: Vec::new(),
            sensor_id: String::new(),
            codec,
            ranges,
        }
    }

    pub fn with_reference(mut self, reference: &RgbImage) -> Result<Dataset> {
        if reference.width != self.size || reference.height != self.size {
            return Err(Error::invalid("reference frame size does not match"));
        }
        self.reference = Some(reference.data.clone());
        self.channels = 6;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Concatenation; datasets must agree on task, size, channels and ranges.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut out = (*first).clone();
        for p in &parts[1..] {
            if p.task != out.task || p.size != out.size || p.channels != out.channels {
                return Err(Error::invalid("datasets differ in task, size or channels"));
            }
            if p.ranges != out.ranges || p.codec != out.codec {
                return Err(Error::invalid("datasets differ in codec or wrench ranges"));
            }
            if p.reference.is_some() {
                return Err(Error::invalid("six-channel datasets of different sensors cannot be merged"));
            }
            out.images.extend_from_slice(&p.images);
            out.depth.extend_from_slice(&p.depth);
            out.wrench.extend_from_slice(&p.wrench);
            out.ids.extend(p.ids.iter().cloned());
            if !out.sensor_id.split('+').any(|s| s == p.sensor_id) {
                out.sensor_id = format!("{}+{}", out.sensor_id, p.sensor_id);
            }
        }
        Ok(out)
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let px = self.size * self.size;
        let mut out = self.clone();
        out.images.truncate(n * px * 3);
        if self.task == Task::Depth {
            out.depth.truncate(n * px);
        } else {
            out.wrench.truncate(n);
        }
        out.ids.truncate(n);
        out
    }

    /// The samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("sample {bad} out of {}", self.len())));
        }
        let px = self.size * self.size;
        let mut out = Dataset {
            images: Vec::with_capacity(idx.len() * px * 3),
            depth: Vec::new(),
            wrench: Vec::new(),
            ids: Vec::with_capacity(idx.len()),
            ..self.clone()
        };
        for &i in idx {
            out.images.extend_from_slice(&self.images[i * px * 3..(i + 1) * px * 3]);
            match self.task {
                Task::Depth => out.depth.extend_from_slice(self.depth_pixels(i)),
                Task::Wrench => out.wrench.push(self.wrench[i]),
            }
            out.ids.push(self.ids[i].clone());
        }
        Ok(out)
    }

    /// A seeded random subset of `ceil(fraction * len)` samples, kept in
    /// their original order.
    pub fn sample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid("fraction must lie in (0, 1]"));
        }
        let n = ((fraction * self.len() as f64).ceil() as usize).min(self.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Network input `[n, c, s, s]` scaled to `[0, 1]`.
    pub fn inputs(&self, idx: &[usize]) -> Tensor {
        let s = self.size;
        let px = s * s;
        let mut data = Vec::with_capacity(idx.len() * self.channels * px);
        let push_rgb = |data: &mut Vec<f64>, rgb: &[u8]| {
            for c in 0..3 {
                data.extend((0..px).map(|k| rgb[3 * k + c] as f64 / 255.0));
            }
        };
        for &i in idx {
            if let Some(r) = &self.reference {
                push_rgb(&mut data, r);
            }
            push_rgb(&mut data, &self.images[i * px * 3..(i + 1) * px * 3]);
        }
        Tensor::new(vec![idx.len(), self.channels, s, s], data)
    }

    /// Targets: depth pixels / 255 as `[n, 1, s, s]`, or wrenches `[n, 6]`.
    pub fn targets(&self, idx: &[usize]) -> Tensor {
        match self.task {
            Task::Depth => {
                let px = self.size * self.size;
                let mut data = Vec::with_capacity(idx.len() * px);
                for &i in idx {
                    data.extend(self.depth[i * px..(i + 1) * px].iter().map(|&p| p as f64 / 255.0));
                }
                Tensor::new(vec![idx.len(), 1, self.size, self.size], data)
            }
            Task::Wrench => {
                let data = idx.iter().flat_map(|&i| self.wrench[i]).collect();
                Tensor::new(vec![idx.len(), 6], data)
            }
        }
    }

    pub fn depth_pixels(&self, i: usize) -> &[u8] {
        let px = self.size * self.size;
        &self.depth[i * px..(i + 1) * px]
    }

    pub fn wrench_target(&self, i: usize) -> [f64; 6] {
        self.wrench[i]
    }

    pub fn frame(&self, i: usize) -> RgbImage {
        let px = self.size * self.size;
        RgbImage {
            width: self.size,
            height: self.size,
            data: self.images[i * px * 3..(i + 1) * px * 3].to_vec(),
        }
    }
}
