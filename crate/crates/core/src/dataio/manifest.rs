use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gelsim::{DepthCodec, PoseFile};
use crate::image::{GrayImage, RgbImage};
use crate::wrench::{Wrench, WrenchRanges, FORCE_UNIT, TORQUE_UNIT};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub force: String,
    pub torque: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            length: "mm".into(),
            force: FORCE_UNIT.into(),
            torque: TORQUE_UNIT.into(),
        }
    }
}

/// First line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub format_version: u32,
    pub sensor_id: String,
    pub seed: u64,
    pub codec: DepthCodec,
    pub r_nominal: f64,
    pub wrench_ranges: WrenchRanges,
    pub units: Units,
    /// `all`, `train` or `test`.
    pub split: String,
    pub image_size: [usize; 2],
    /// Undeflected frame of this sensor, relative to the manifest directory.
    pub reference_frame: Option<String>,
    pub record_count: usize,
}

impl ManifestHeader {
    pub fn new(sensor_id: &str, seed: u64, codec: DepthCodec, r_nominal: f64, image_size: [usize; 2]) -> Self {
        ManifestHeader {
            kind: "header".into(),
            format_version: FORMAT_VERSION,
            sensor_id: sensor_id.into(),
            seed,
            codec,
            r_nominal,
            wrench_ranges: WrenchRanges::default(),
            units: Units::default(),
            split: "all".into(),
            image_size,
            reference_frame: None,
            record_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub image: String,
    pub depth: Option<String>,
    /// Physical wrench `[fx, fy, fz, tx, ty, tz]`.
    pub wrench: Option<[f64; 6]>,
    pub sensor_id: String,
    pub indenter_id: String,
    pub step: usize,
    pub pose: PoseFile,
    pub seed: u64,
    pub penetration_mm: f64,
}

impl FrameRecord {
    pub fn wrench(&self) -> Option<Wrench> {
        self.wrench.map(Wrench::from_array)
    }
}

/// JSONL manifest. Paths in records are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<FrameRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(header: ManifestHeader, root: impl Into<PathBuf>) -> Self {
        Manifest {
            header,
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialized form: header line then one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut header = self.header.clone();
        header.record_count = self.records.len();
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Manifest> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
        let header: ManifestHeader = serde_json::from_str(first)?;
        if header.kind != "header" {
            return Err(Error::Format("manifest must start with a header line".into()));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                header.format_version
            )));
        }
        let records = lines
            .map(|l| serde_json::from_str::<FrameRecord>(l).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        if records.len() != header.record_count {
            return Err(Error::Format(format!(
                "header declares {} records, found {}",
                header.record_count,
                records.len()
            )));
        }
        let m = Manifest {
            header,
            records,
            root: root.into(),
        };
        m.check_records()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, root)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_jsonl()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Unique ids and at most one missing target per record.
    pub fn check_records(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Format(format!("duplicate record id {}", r.id)));
            }
            if r.depth.is_none() && r.wrench.is_none() {
                return Err(Error::Format(format!("record {} has neither depth nor wrench", r.id)));
            }
        }
        Ok(())
    }

    /// Verifies that every referenced file exists with the declared size.
    pub fn verify_files(&self) -> Result<()> {
        self.check_records()?;
        let [w, h] = self.header.image_size;
        for r in &self.records {
            let img = self.load_image(r)?;
            if (img.width, img.height) != (w, h) {
                return Err(Error::Format(format!("{} is {}x{}, expected {w}x{h}", r.image, img.width, img.height)));
            }
            if let Some(d) = self.load_depth(r)? {
                if (d.width, d.height) != (w, h) {
                    return Err(Error::Format(format!("depth of {} has the wrong size", r.id)));
                }
            }
        }
        if let Some(rf) = &self.header.reference_frame {
            RgbImage::read_png(&self.root.join(rf))?;
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_image(&self, r: &FrameRecord) -> Result<RgbImage> {
        RgbImage::read_png(&self.resolve(&r.image))
    }

    pub fn load_depth(&self, r: &FrameRecord) -> Result<Option<GrayImage>> {
        r.depth.as_ref().map(|p| GrayImage::read_png(&self.resolve(p))).transpose()
    }

    pub fn load_reference(&self) -> Result<Option<RgbImage>> {
        self.header
            .reference_frame
            .as_ref()
            .map(|p| RgbImage::read_png(&self.resolve(p)))
            .transpose()
    }

    /// Distinct indenter ids with their record counts.
    pub fn indenter_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.indenter_id.clone()).or_insert(0) += 1;
        }
        m
    }

    fn subset(&self, split: &str, keep: impl Fn(&FrameRecord) -> bool) -> Manifest {
        let mut header = self.header.clone();
        header.split = split.into();
        let records: Vec<FrameRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        header.record_count = records.len();
        Manifest {
            header,
            records,
            root: self.root.clone(),
        }
    }
}

/// Partition by indenter: the test set holds exactly the held-out indenters.
pub fn split(manifest: &Manifest, held_out: &[String]) -> Result<(Manifest, Manifest)> {
    let known = manifest.indenter_counts();
    for id in held_out {
        if !known.contains_key(id) {
            return Err(Error::invalid(format!("unknown indenter id {id}")));
        }
    }
    let held: BTreeSet<&str> = held_out.iter().map(String::as_str).collect();
    let train = manifest.subset("train", |r| !held.contains(r.indenter_id.as_str()));
    let test = manifest.subset("test", |r| held.contains(r.indenter_id.as_str()));
    if train.is_empty() && !test.is_empty() {
        log::warn!("degenerate split: every indenter is held out, the training set is empty");
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Pose;

    fn record(id: &str, indenter: &str) -> FrameRecord {
        FrameRecord {
            id: id.into(),
            image: format!("frames/{id}.png"),
            depth: Some(format!("depth/{id}.png")),
            wrench: Some([0.1, -0.2, -3.0, 0.01, 0.0, 1e-17]),
            sensor_id: "s0".into(),
            indenter_id: indenter.into(),
            step: 0,
            pose: Pose::default().into(),
            seed: 7,
            penetration_mm: 1.0 / 3.0,
        }
    }

    fn manifest(per: usize, indenters: usize) -> Manifest {
        let mut m = Manifest::new(ManifestHeader::new("s0", 7, DepthCodec::default(), 15.5, [64, 64]), ".");
        for i in 0..indenters {
            for s in 0..per {
                m.records.push(record(&format!("i{i}_{s:04}"), &format!("i{i}")));
            }
        }
        m
    }

    #[test]
    fn jsonl_roundtrip_is_byte_identical() {
        let m = manifest(3, 2);
        let text = m.to_jsonl().unwrap();
        let back = Manifest::parse(&text, ".").unwrap();
        assert_eq!(back.to_jsonl().unwrap(), text);
        assert_eq!(back.records, m.records);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut m = manifest(1, 1);
        m.records.push(m.records[0].clone());
        assert!(Manifest::parse(&m.to_jsonl().unwrap(), ".").is_err());
    }

    #[test]
    fn split_arithmetic() {
        let m = manifest(4, 21);
        let (train, test) = split(&m, &["i3".to_string()]).unwrap();
        assert_eq!(test.len() * 21, m.len());
        assert_eq!(train.len() + test.len(), m.len());
        let (train, test) = split(&m, &[]).unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), m.len());
        let all: Vec<String> = (0..21).map(|i| format!("i{i}")).collect();
        let (train, test) = split(&m, &all).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), m.len());
        assert!(split(&m, &["nope".to_string()]).is_err());
    }
}
