//! Error statistics in physical units, violin summaries and report files
//! (JSON, CSV and SVG).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gelsim::DepthCodec;
use crate::image::GrayImage;
use crate::wrench::{AXIS_NAMES, FORCE_UNIT, TORQUE_UNIT};

pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");
pub const KDE_POINTS: usize = 128;

/// Order-statistic quantiles at 5/25/50/75/95 %.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

impl Quantiles {
    pub fn of(samples: &[f64]) -> Result<Quantiles> {
        if samples.is_empty() {
            return Err(Error::invalid("quantiles of an empty sample"));
        }
        let s = sorted(samples);
        Ok(Quantiles {
            q05: quantile_sorted(&s, 0.05),
            q25: quantile_sorted(&s, 0.25),
            q50: quantile_sorted(&s, 0.5),
            q75: quantile_sorted(&s, 0.75),
            q95: quantile_sorted(&s, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthErrorStats {
    pub frames: usize,
    pub pixels: usize,
    /// Mean absolute error over all pixels, mm.
    pub mean_l1_mm: Option<f64>,
    /// Root-mean-square error over all pixels, mm.
    pub rms_mm: Option<f64>,
    pub per_frame_l1_mm: Vec<f64>,
    pub per_frame_rms_mm: Vec<f64>,
    /// Of the per-frame L1 errors.
    pub quantiles: Option<Quantiles>,
}

/// Integer error sums of one frame: `(sum |dp|, sum dp^2, pixels)`.
fn pixel_sums(pred: &GrayImage, gt: &GrayImage) -> Result<(u64, u64, usize)> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::invalid(format!(
            "depth images differ in size: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut a = 0u64;
    let mut q = 0u64;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let d = (p as i64 - g as i64).unsigned_abs();
        a += d;
        q += d * d;
    }
    Ok((a, q, pred.data.len()))
}

/// Errors of one predicted depth image.
pub fn depth_errors(pred: &GrayImage, gt: &GrayImage, codec: &DepthCodec) -> Result<DepthErrorStats> {
    depth_errors_many(&[(pred, gt)], codec)
}

/// Errors pooled over frames: pixel sums are exact integers scaled by the
/// codec step.
pub fn depth_errors_many(pairs: &[(&GrayImage, &GrayImage)], codec: &DepthCodec) -> Result<DepthErrorStats> {
    let mut total_a = 0u64;
    let mut total_q = 0u64;
    let mut pixels = 0usize;
    let mut l1 = Vec::with_capacity(pairs.len());
    let mut rms = Vec::with_capacity(pairs.len());
    for (p, g) in pairs {
        let (a, q, n) = pixel_sums(p, g)?;
        total_a += a;
        total_q += q;
        pixels += n;
        let n = n.max(1) as f64;
        l1.push(codec.step * (a as f64 / n));
        rms.push(codec.step * (q as f64 / n).sqrt());
    }
    let (mean_l1_mm, rms_mm) = if pixels > 0 {
        (
            Some(codec.step * (total_a as f64 / pixels as f64)),
            Some(codec.step * (total_q as f64 / pixels as f64).sqrt()),
        )
    } else {
        (None, None)
    };
    let quantiles = (!l1.is_empty()).then(|| Quantiles::of(&l1)).transpose()?;
    Ok(DepthErrorStats {
        frames: pairs.len(),
        pixels,
        mean_l1_mm,
        rms_mm,
        per_frame_l1_mm: l1,
        per_frame_rms_mm: rms,
        quantiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenchGroups {
    pub f_xy: f64,
    pub f_z: f64,
    pub t_xy: f64,
    pub t_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenchErrorStats {
    pub samples: usize,
    /// Mean absolute error per axis (fx, fy, fz, tx, ty, tz).
    pub per_axis_mae: Vec<f64>,
    pub groups: Option<WrenchGroups>,
    /// Per-sample absolute errors by axis.
    pub abs_errors: Vec<[f64; 6]>,
    pub force_unit: String,
    pub torque_unit: String,
}

pub fn wrench_errors(preds: &[[f64; 6]], gts: &[[f64; 6]]) -> Result<WrenchErrorStats> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!("{} predictions for {} targets", preds.len(), gts.len())));
    }
    let abs_errors: Vec<[f64; 6]> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| std::array::from_fn(|a| (p[a] - g[a]).abs()))
        .collect();
    let n = abs_errors.len();
    let (per_axis_mae, groups) = if n == 0 {
        (Vec::new(), None)
    } else {
        let mae: Vec<f64> = (0..6).map(|a| abs_errors.iter().map(|e| e[a]).sum::<f64>() / n as f64).collect();
        let g = WrenchGroups {
            f_xy: 0.5 * (mae[0] + mae[1]),
            f_z: mae[2],
            t_xy: 0.5 * (mae[3] + mae[4]),
            t_z: mae[5],
        };
        (mae, Some(g))
    };
    Ok(WrenchErrorStats {
        samples: n,
        per_axis_mae,
        groups,
        abs_errors,
        force_unit: FORCE_UNIT.into(),
        torque_unit: TORQUE_UNIT.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinStats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub quantiles: Quantiles,
    pub bandwidth: f64,
    pub kde_x: Vec<f64>,
    pub kde_y: Vec<f64>,
}

/// Quantiles plus a Gaussian KDE (Silverman bandwidth) on 128 points
/// spanning three bandwidths beyond the data.
pub fn violin_stats(samples: &[f64]) -> Result<ViolinStats> {
    if samples.is_empty() {
        return Err(Error::invalid("violin of an empty sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("violin samples must be finite"));
    }
    let s = sorted(samples);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let quantiles = Quantiles::of(&s)?;
    let iqr = quantiles.q75 - quantiles.q25;
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        // degenerate sample: a narrow kernel around the common value
        h = 1e-3 * s[n - 1].abs().max(1.0);
    }
    let lo = s[0] - 3.0 * h;
    let hi = s[n - 1] + 3.0 * h;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kde_x: Vec<f64> = (0..KDE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64)
        .collect();
    let kde_y = kde_x
        .iter()
        .map(|&x| norm * s.iter().map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(ViolinStats {
        n,
        min: s[0],
        max: s[n - 1],
        mean,
        quantiles,
        bandwidth: h,
        kde_x,
        kde_y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMetadata {
    pub tool_version: String,
    pub checkpoint_sha256: Option<String>,
    pub manifest: Option<String>,
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSection {
    pub stats: DepthErrorStats,
    pub violin: Option<ViolinStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenchSection {
    /// Physical units.
    pub stats: WrenchErrorStats,
    /// Mean absolute error of range-normalized wrenches.
    pub normalized_mae: Option<f64>,
    pub violins: Vec<ViolinStats>,
}

/// A training curve for the line plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub metadata: RunMetadata,
    pub depth: Option<DepthSection>,
    pub wrench: Option<WrenchSection>,
    pub curves: Vec<Curve>,
}

impl Report {
    pub fn new(metadata: RunMetadata) -> Report {
        Report {
            format_version: crate::FORMAT_VERSION,
            metadata,
            depth: None,
            wrench: None,
            curves: Vec::new(),
        }
    }

    pub fn with_depth(mut self, stats: DepthErrorStats) -> Result<Report> {
        let violin = (!stats.per_frame_l1_mm.is_empty())
            .then(|| violin_stats(&stats.per_frame_l1_mm))
            .transpose()?;
        self.depth = Some(DepthSection { stats, violin });
        Ok(self)
    }

    pub fn with_wrench(mut self, stats: WrenchErrorStats, normalized_mae: Option<f64>) -> Result<Report> {
        let violins = if stats.abs_errors.is_empty() {
            Vec::new()
        } else {
            (0..6)
                .map(|a| violin_stats(&stats.abs_errors.iter().map(|e| e[a]).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?
        };
        self.wrench = Some(WrenchSection {
            stats,
            normalized_mae,
            violins,
        });
        Ok(self)
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

fn violin_svg(title: &str, unit: &str, violins: &[(&str, &ViolinStats)]) -> String {
    let (w, h) = (120.0 * violins.len().max(1) as f64 + 80.0, 320.0);
    let (top, bottom, left) = (30.0, 280.0, 60.0);
    let lo = violins.iter().map(|v| v.1.kde_x[0]).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = violins.iter().map(|v| v.1.kde_x[KDE_POINTS - 1]).fold(f64::NEG_INFINITY, f64::max);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let y_of = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{:.3}</text>"#,
            left - 4.0,
            y + 3.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="11" transform="rotate(-90 14 {:.1})">{unit}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );
    for (i, (name, v)) in violins.iter().enumerate() {
        let cx = left + 60.0 + 120.0 * i as f64;
        let peak = v.kde_y.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut pts = Vec::with_capacity(2 * KDE_POINTS);
        for (x, y) in v.kde_x.iter().zip(&v.kde_y) {
            pts.push(format!("{:.2},{:.2}", cx + 45.0 * y / peak, y_of(*x)));
        }
        for (x, y) in v.kde_x.iter().zip(&v.kde_y).rev() {
            pts.push(format!("{:.2},{:.2}", cx - 45.0 * y / peak, y_of(*x)));
        }
        let _ = writeln!(s, r##"<polygon points="{}" fill="#9ecae1" stroke="#3182bd"/>"##, pts.join(" "));
        let q = v.quantiles;
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black" stroke-width="3"/>"#,
            y_of(q.q25),
            y_of(q.q75)
        );
        let _ = writeln!(s, r#"<circle cx="{cx}" cy="{:.2}" r="3" fill="white" stroke="black"/>"#, y_of(q.q50));
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{}" font-size="11" text-anchor="middle">{name}</text>"#,
            bottom + 18.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn curves_svg(curves: &[Curve]) -> String {
    let (w, h) = (520.0, 320.0);
    let (top, bottom, left, right) = (20.0, 280.0, 60.0, 500.0);
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !(x1 > x0) {
        x0 = 0.0;
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y0 = if y0.is_finite() { y0 - 0.5 } else { 0.0 };
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);
    let colors = ["#3182bd", "#e6550d", "#31a354", "#756bb1"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="{}" font-size="10">{x0}</text>"#, bottom + 14.0);
    let _ = writeln!(s, r#"<text x="{right}" y="{}" font-size="10" text-anchor="end">{x1}</text>"#, bottom + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{:.4}</text>"#, left - 4.0, top + 4.0, y1);
    let _ = writeln!(s, r#"<text x="{}" y="{bottom}" font-size="10" text-anchor="end">{:.4}</text>"#, left - 4.0, y0);
    for (i, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1]))).collect();
        let col = colors[i % colors.len()];
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{col}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{col}" text-anchor="end">{}</text>"#,
            right,
            top + 14.0 * (i + 1) as f64,
            c.name
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json` plus CSV tables and SVG plots; returns the paths.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files: Vec<(String, String)> = Vec::new();
    files.push(("report.json".into(), serde_json::to_string_pretty(report)? + "\n"));
    if let Some(d) = &report.depth {
        let mut csv = String::from("frame,l1_mm,rms_mm\n");
        for (i, (a, b)) in d.stats.per_frame_l1_mm.iter().zip(&d.stats.per_frame_rms_mm).enumerate() {
            let _ = writeln!(csv, "{i},{},{}", fmt_num(*a), fmt_num(*b));
        }
        files.push(("depth_errors.csv".into(), csv));
        if let Some(v) = &d.violin {
            files.push(("depth_violin.svg".into(), violin_svg("Depth error per frame", "mm", &[("L1", v)])));
        }
    }
    if let Some(w) = &report.wrench {
        let mut csv = String::from("axis,mae,unit\n");
        for (a, m) in w.stats.per_axis_mae.iter().enumerate() {
            let unit = if a < 3 { FORCE_UNIT } else { TORQUE_UNIT };
            let _ = writeln!(csv, "{},{},{unit}", AXIS_NAMES[a], fmt_num(*m));
        }
        files.push(("wrench_errors.csv".into(), csv));
        if w.violins.len() == 6 {
            let forces: Vec<(&str, &ViolinStats)> = (0..3).map(|a| (AXIS_NAMES[a], &w.violins[a])).collect();
            let torques: Vec<(&str, &ViolinStats)> = (3..6).map(|a| (AXIS_NAMES[a], &w.violins[a])).collect();
            files.push(("force_violin.svg".into(), violin_svg("Absolute force error", FORCE_UNIT, &forces)));
            files.push(("torque_violin.svg".into(), violin_svg("Absolute torque error", TORQUE_UNIT, &torques)));
        }
    }
    if !report.curves.is_empty() {
        let mut csv = String::from("curve,step,value\n");
        for c in &report.curves {
            for p in &c.points {
                let _ = writeln!(csv, "{},{},{}", c.name, p[0], fmt_num(p[1]));
            }
        }
        files.push(("curves.csv".into(), csv));
        files.push(("curves.svg".into(), curves_svg(&report.curves)));
    }
    let mut out = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: &[u8]) -> GrayImage {
        GrayImage {
            width: v.len(),
            height: 1,
            data: v.to_vec(),
        }
    }

    #[test]
    fn depth_error_examples() {
        let c = DepthCodec::default();
        let gt = img(&[10, 20, 30, 40]);
        let s = depth_errors(&gt, &gt, &c).unwrap();
        assert_eq!((s.mean_l1_mm, s.rms_mm), (Some(0.0), Some(0.0)));
        let off = img(&[11, 21, 31, 41]);
        assert_eq!(depth_errors(&off, &gt, &c).unwrap().mean_l1_mm, Some(0.0182));
        let half = img(&[12, 22, 30, 40]);
        let s = depth_errors(&half, &gt, &c).unwrap();
        assert!((s.mean_l1_mm.unwrap() - 0.0182).abs() < 1e-15);
        assert!((s.rms_mm.unwrap() - 0.0182 * 2f64.sqrt()).abs() < 1e-15);
        assert!(depth_errors(&img(&[1, 2]), &gt, &c).is_err());
    }

    #[test]
    fn wrench_error_examples() {
        let z = [[0.0; 6]];
        let s = wrench_errors(&z, &z).unwrap();
        assert!(s.per_axis_mae.iter().all(|&v| v == 0.0));
        let p = [[0.410, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert_eq!(wrench_errors(&p, &z).unwrap().per_axis_mae[0], 0.410);
        let e = [0.3, -0.2, 1.0, 0.5, -0.5, 0.1];
        let neg = e.map(|v| -v);
        let s = wrench_errors(&[e, neg], &[[0.0; 6], [0.0; 6]]).unwrap();
        for a in 0..6 {
            assert_eq!(s.per_axis_mae[a], e[a].abs());
        }
        assert!(wrench_errors(&p, &[]).is_err());
    }

    #[test]
    fn violin_examples() {
        let v = violin_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((v.quantiles.q25, v.quantiles.q50, v.quantiles.q75), (2.0, 3.0, 4.0));
        assert_eq!(v.kde_x.len(), KDE_POINTS);
        let c = violin_stats(&[2.5; 7]).unwrap();
        let q = c.quantiles;
        assert!([q.q05, q.q25, q.q50, q.q75, q.q95].iter().all(|&x| x == 2.5));
        let peaks = (1..KDE_POINTS - 1)
            .filter(|&i| c.kde_y[i] > c.kde_y[i - 1] && c.kde_y[i] >= c.kde_y[i + 1])
            .count();
        assert_eq!(peaks, 1);
        let xs = [0.3, 1.7, 2.2, 5.0, 8.1];
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        let (a, b) = (violin_stats(&xs).unwrap().quantiles, violin_stats(&neg).unwrap().quantiles);
        assert!((a.q05 + b.q95).abs() < 1e-12 && (a.q25 + b.q75).abs() < 1e-12 && (a.q50 + b.q50).abs() < 1e-12);
        assert!(violin_stats(&[]).is_err());
    }

    #[test]
    fn empty_report_is_valid_json() {
        let r = Report::new(RunMetadata::default())
            .with_depth(depth_errors_many(&[], &DepthCodec::default()).unwrap())
            .unwrap()
            .with_wrench(wrench_errors(&[], &[]).unwrap(), None)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["depth"]["stats"]["per_frame_l1_mm"], serde_json::json!([]));
    }
}
