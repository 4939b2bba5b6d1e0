//! Randomized single-stroke gel pattern.
//!
//! Points are stippled with Lloyd relaxation over exact, square-clipped
//! Voronoi cells, joined into one open tour (nearest neighbour then 2-opt),
//! and rasterized as an anti-aliased polyline.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Default point count and domain of the stamp pattern.
pub const DEFAULT_POINTS: usize = 8192;
pub const DEFAULT_DOMAIN_MM: f64 = 25.0;
pub const DEFAULT_ITERATIONS: usize = 50;
pub const DEFAULT_PX_PER_MM: f64 = 20.0;
pub const DEFAULT_STROKE_MM: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<[f64; 2]>,
    pub domain_size: f64,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternImage {
    /// 255 is bare gel, 0 is full ink.
    pub pixels: GrayImage,
    pub px_per_mm: f64,
    pub stroke_width: f64,
}

/// Sidecar written next to an exported pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSidecar {
    pub seed: u64,
    pub n: usize,
    pub iterations: usize,
    pub domain_mm: f64,
    pub px_per_mm: f64,
    pub stroke_mm: f64,
    pub coverage: f64,
    pub tour_length_mm: f64,
}

/// Full parameter set for [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub n: usize,
    pub domain_mm: f64,
    pub iterations: usize,
    pub px_per_mm: f64,
    pub stroke_mm: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            n: DEFAULT_POINTS,
            domain_mm: DEFAULT_DOMAIN_MM,
            iterations: DEFAULT_ITERATIONS,
            px_per_mm: DEFAULT_PX_PER_MM,
            stroke_mm: DEFAULT_STROKE_MM,
        }
    }
}

/// Everything produced by one pattern run.
#[derive(Debug, Clone)]
pub struct GeneratedPattern {
    pub points: PointSet,
    pub nearest_neighbor_length: f64,
    pub tour: Tour,
    pub image: PatternImage,
}

pub fn generate(cfg: &PatternConfig, seed: u64) -> Result<GeneratedPattern> {
    let points = stipple(cfg.n, cfg.domain_mm, cfg.iterations, seed)?;
    let (tour, nearest_neighbor_length) = if points.points.len() >= 2 {
        let nn = nearest_neighbor_tour(&points, seed)?;
        let nn_len = nn.length;
        (two_opt(&points, nn), nn_len)
    } else {
        (Tour { order: vec![0], length: 0.0 }, 0.0)
    };
    let image = rasterize_tour(&tour, &points, cfg.px_per_mm, cfg.stroke_mm)?;
    Ok(GeneratedPattern {
        points,
        nearest_neighbor_length,
        tour,
        image,
    })
}

// ---------------------------------------------------------------- stippling

/// Uniform random initialization followed by `iterations` Lloyd steps.
pub fn stipple(n: usize, domain: f64, iterations: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::invalid("stipple needs at least one point"));
    }
    if !(domain > 0.0) || !domain.is_finite() {
        return Err(Error::invalid(format!("domain must be positive, got {domain}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = domain * 1e-9;
    let mut points: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let x = margin + rng.random::<f64>() * (domain - 2.0 * margin);
            let y = margin + rng.random::<f64>() * (domain - 2.0 * margin);
            [x, y]
        })
        .collect();
    for _ in 0..iterations {
        points = voronoi_centroids(&points, domain);
    }
    Ok(PointSet {
        points,
        domain_size: domain,
        seed,
        iterations,
    })
}

/// Mean distance from each site to the centroid of its Voronoi cell.
pub fn centroid_residual(points: &[[f64; 2]], domain: f64) -> f64 {
    let c = voronoi_centroids(points, domain);
    let total: f64 = points
        .iter()
        .zip(&c)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    total / points.len() as f64
}

/// Centroids of the Voronoi cells of `points` clipped to `[0, domain]^2`.
pub fn voronoi_centroids(points: &[[f64; 2]], domain: f64) -> Vec<[f64; 2]> {
    let grid = SiteGrid::new(points, domain);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let cell = grid.cell_polygon(points, i);
            polygon_centroid(&cell).unwrap_or(points[i])
        })
        .collect()
}

/// Uniform bucket grid for neighbour lookups.
struct SiteGrid {
    cells: usize,
    cell_size: f64,
    buckets: Vec<Vec<usize>>,
    domain: f64,
}

impl SiteGrid {
    fn new(points: &[[f64; 2]], domain: f64) -> Self {
        let cells = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let cell_size = domain / cells as f64;
        let mut buckets = vec![Vec::new(); cells * cells];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = Self::coord(p, cell_size, cells);
            buckets[cy * cells + cx].push(i);
        }
        SiteGrid {
            cells,
            cell_size,
            buckets,
            domain,
        }
    }

    fn coord(p: &[f64; 2], cell_size: f64, cells: usize) -> (usize, usize) {
        let cx = ((p[0] / cell_size) as isize).clamp(0, cells as isize - 1) as usize;
        let cy = ((p[1] / cell_size) as isize).clamp(0, cells as isize - 1) as usize;
        (cx, cy)
    }

    /// Clip the domain square by bisectors, growing the search ring until no
    /// unvisited site can still cut the cell.
    fn cell_polygon(&self, points: &[[f64; 2]], i: usize) -> Vec<[f64; 2]> {
        let d = self.domain;
        let mut poly = vec![[0.0, 0.0], [d, 0.0], [d, d], [0.0, d]];
        let p = points[i];
        let (cx, cy) = Self::coord(&p, self.cell_size, self.cells);
        let mut ring = 0usize;
        loop {
            for (bx, by) in ring_cells(cx, cy, ring, self.cells) {
                for &j in &self.buckets[by * self.cells + bx] {
                    if j == i {
                        continue;
                    }
                    let q = points[j];
                    if q == p {
                        continue;
                    }
                    poly = clip_bisector(&poly, p, q);
                }
            }
            let reach = poly
                .iter()
                .map(|v| ((v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            // Every site outside rings 0..=ring lies at least ring*cell_size away.
            if ring as f64 * self.cell_size >= 2.0 * reach || ring > self.cells {
                break;
            }
            ring += 1;
        }
        poly
    }
}

fn ring_cells(cx: usize, cy: usize, ring: usize, cells: usize) -> Vec<(usize, usize)> {
    let r = ring as isize;
    let (cx, cy) = (cx as isize, cy as isize);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx.abs().max(dy.abs()) != r {
                continue;
            }
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < cells && (y as usize) < cells {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}

/// Keep the half of `poly` closer to `p` than to `q`.
fn clip_bisector(poly: &[[f64; 2]], p: [f64; 2], q: [f64; 2]) -> Vec<[f64; 2]> {
    let nx = q[0] - p[0];
    let ny = q[1] - p[1];
    let mx = 0.5 * (p[0] + q[0]);
    let my = 0.5 * (p[1] + q[1]);
    let side = |v: &[f64; 2]| (v[0] - mx) * nx + (v[1] - my) * ny;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let sa = side(&a);
        let sb = side(&b);
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn polygon_centroid(poly: &[[f64; 2]]) -> Option<[f64; 2]> {
    if poly.len() < 3 {
        return None;
    }
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    let o = poly[0];
    for k in 1..poly.len() - 1 {
        let p1 = [poly[k][0] - o[0], poly[k][1] - o[1]];
        let p2 = [poly[k + 1][0] - o[0], poly[k + 1][1] - o[1]];
        let cross = p1[0] * p2[1] - p2[0] * p1[1];
        a += cross;
        cx += (p1[0] + p2[0]) * cross;
        cy += (p1[1] + p2[1]) * cross;
    }
    if a.abs() < 1e-300 {
        return None;
    }
    Some([o[0] + cx / (3.0 * a), o[1] + cy / (3.0 * a)])
}

// ---------------------------------------------------------------- tour

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Open-path length of `order` over `points`.
pub fn path_length(points: &[[f64; 2]], order: &[usize]) -> f64 {
    order.windows(2).map(|w| dist(points[w[0]], points[w[1]])).sum()
}

/// Nearest-neighbour construction followed by 2-opt until no improving
/// segment reversal remains.
pub fn solve_tour(ps: &PointSet, seed: u64) -> Result<Tour> {
    let nn = nearest_neighbor_tour(ps, seed)?;
    Ok(two_opt(ps, nn))
}

/// Greedy open path from a seed-chosen start point.
pub fn nearest_neighbor_tour(ps: &PointSet, seed: u64) -> Result<Tour> {
    let pts = &ps.points;
    let n = pts.len();
    if n < 2 {
        return Err(Error::invalid("tour needs at least two points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7457_5f74_6f75_72);
    let start = rng.random_range(0..n);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, &v) in visited.iter().enumerate() {
            if v {
                continue;
            }
            let d = (pts[cur][0] - pts[j][0]).powi(2) + (pts[cur][1] - pts[j][1]).powi(2);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        visited[best] = true;
        order.push(best);
        cur = best;
    }
    let length = path_length(pts, &order);
    Ok(Tour { order, length })
}

/// Improve an open path with 2-opt. A neighbour-list sweep does the bulk of
/// the work; exhaustive passes then run until no reversal improves.
pub fn two_opt(ps: &PointSet, tour: Tour) -> Tour {
    let pts = &ps.points;
    let n = pts.len();
    let mut path = tour.order;
    if n < 3 {
        let length = path_length(pts, &path);
        return Tour { order: path, length };
    }
    let mut pos = vec![0usize; n];
    for (i, &c) in path.iter().enumerate() {
        pos[c] = i;
    }
    let neighbors = knn_lists(pts, 10.min(n - 1));

    // Edge cost between path slots a and a+1; slots -1 and n are virtual.
    let edge = |path: &[usize], a: isize, b: isize| -> f64 {
        if a < 0 || b < 0 || a as usize >= n || b as usize >= n {
            0.0
        } else {
            dist(pts[path[a as usize]], pts[path[b as usize]])
        }
    };
    const EPS: f64 = 1e-10;

    let mut dont_look = vec![false; n];
    let mut queue: std::collections::VecDeque<usize> = (0..n).map(|i| path[i]).collect();
    while let Some(c) = queue.pop_front() {
        if dont_look[c] {
            continue;
        }
        let mut improved = false;
        'search: for dir in [1isize, -1] {
            for &c2 in &neighbors[c] {
                let i = pos[c] as isize;
                let j = pos[c2] as isize;
                let (a, b) = if dir == 1 {
                    (i.min(j), i.max(j))
                } else {
                    (i.min(j) - 1, i.max(j) - 1)
                };
                if b - a < 2 {
                    continue;
                }
                let delta = edge(&path, a, b) + edge(&path, a + 1, b + 1)
                    - edge(&path, a, a + 1)
                    - edge(&path, b, b + 1);
                if delta < -EPS {
                    reverse(&mut path, &mut pos, (a + 1) as usize, b as usize);
                    for s in [a, a + 1, b, b + 1] {
                        if s >= 0 && (s as usize) < n {
                            let city = path[s as usize];
                            dont_look[city] = false;
                            queue.push_back(city);
                        }
                    }
                    improved = true;
                    break 'search;
                }
            }
        }
        if improved {
            queue.push_back(c);
        } else {
            dont_look[c] = true;
        }
    }

    loop {
        let mut changed = false;
        for a in -1..(n as isize - 2) {
            let mut b = a + 2;
            while b < n as isize {
                let delta = edge(&path, a, b) + edge(&path, a + 1, b + 1)
                    - edge(&path, a, a + 1)
                    - edge(&path, b, b + 1);
                if delta < -EPS {
                    reverse(&mut path, &mut pos, (a + 1) as usize, b as usize);
                    changed = true;
                }
                b += 1;
            }
        }
        if !changed {
            break;
        }
    }
    let length = path_length(pts, &path);
    Tour { order: path, length }
}

fn reverse(path: &mut [usize], pos: &mut [usize], from: usize, to: usize) {
    path[from..=to].reverse();
    for k in from..=to {
        pos[path[k]] = k;
    }
}

fn knn_lists(pts: &[[f64; 2]], k: usize) -> Vec<Vec<usize>> {
    let n = pts.len();
    let domain = pts
        .iter()
        .flat_map(|p| [p[0], p[1]])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let grid = SiteGrid::new(pts, domain * (1.0 + 1e-12));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = pts[i];
            let (cx, cy) = SiteGrid::coord(&p, grid.cell_size, grid.cells);
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let mut ring = 0;
            loop {
                for (bx, by) in ring_cells(cx, cy, ring, grid.cells) {
                    for &j in &grid.buckets[by * grid.cells + bx] {
                        if j != i {
                            cand.push((dist(p, pts[j]), j));
                        }
                    }
                }
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let covered = ring as f64 * grid.cell_size;
                if (cand.len() >= k && cand[k - 1].0 <= covered) || ring > grid.cells {
                    break;
                }
                ring += 1;
            }
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- raster

/// Anti-aliased polyline through the points in tour order.
pub fn rasterize_tour(tour: &Tour, ps: &PointSet, px_per_mm: f64, stroke_width: f64) -> Result<PatternImage> {
    if !(px_per_mm > 0.0) || !px_per_mm.is_finite() {
        return Err(Error::invalid("resolution must be positive"));
    }
    if !(stroke_width > 0.0) {
        return Err(Error::invalid("stroke width must be positive"));
    }
    if tour.order.iter().any(|&i| i >= ps.points.len()) {
        return Err(Error::invalid("tour references a point outside the set"));
    }
    let size = (ps.domain_size * px_per_mm).round().max(1.0) as usize;
    let mut ink = vec![0.0f64; size * size];
    let half_w = 0.5 * stroke_width * px_per_mm;
    let to_px = |p: [f64; 2]| [p[0] * px_per_mm, p[1] * px_per_mm];
    let mut stamp = |a: [f64; 2], b: [f64; 2]| {
        let x0 = (a[0].min(b[0]) - half_w - 1.0).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - half_w - 1.0).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + half_w + 1.0).ceil() as usize).min(size);
        let y1 = ((a[1].max(b[1]) + half_w + 1.0).ceil() as usize).min(size);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for y in y0..y1 {
            for x in x0..x1 {
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let t = if len2 > 0.0 {
                    (((c[0] - a[0]) * dx + (c[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d = dist(c, [a[0] + t * dx, a[1] + t * dy]);
                let cov = (half_w - d + 0.5).clamp(0.0, 1.0);
                let cell = &mut ink[y * size + x];
                if cov > *cell {
                    *cell = cov;
                }
            }
        }
    };
    if tour.order.len() == 1 {
        let p = to_px(ps.points[tour.order[0]]);
        stamp(p, p);
    }
    for w in tour.order.windows(2) {
        stamp(to_px(ps.points[w[0]]), to_px(ps.points[w[1]]));
    }
    let data = ink
        .iter()
        .map(|&c| (255.0 * (1.0 - c)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(PatternImage {
        pixels: GrayImage {
            width: size,
            height: size,
            data,
        },
        px_per_mm,
        stroke_width,
    })
}

/// Mean ink fraction, where a pixel value `v` carries `(255 - v) / 255` ink.
pub fn coverage_fraction(img: &PatternImage) -> f64 {
    gray_coverage(&img.pixels)
}

pub fn gray_coverage(img: &GrayImage) -> f64 {
    if img.data.is_empty() {
        return 0.0;
    }
    let ink: u64 = img.data.iter().map(|&v| 255 - v as u64).sum();
    ink as f64 / (255.0 * img.data.len() as f64)
}

/// Largest normalized autocorrelation of the mean-free ink field over all
/// shifts with Euclidean length at least `min_shift` pixels.
pub fn max_offpeak_autocorrelation(img: &GrayImage, min_shift: f64) -> f64 {
    let (w, h) = (img.width, img.height);
    let pw = (2 * w).next_power_of_two();
    let ph = (2 * h).next_power_of_two();
    let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / img.data.len() as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); pw * ph];
    for y in 0..h {
        for x in 0..w {
            buf[y * pw + x] = Complex::new(img.get(x, y) as f64 - mean, 0.0);
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut buf, pw, ph, &mut planner, false);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    fft2(&mut buf, pw, ph, &mut planner, true);
    let peak = buf[0].re;
    if peak <= 0.0 {
        return 0.0;
    }
    let mut worst = f64::NEG_INFINITY;
    for y in 0..ph {
        for x in 0..pw {
            let sx = if x > pw / 2 { x as f64 - pw as f64 } else { x as f64 };
            let sy = if y > ph / 2 { y as f64 - ph as f64 } else { y as f64 };
            if sx * sx + sy * sy < min_shift * min_shift {
                continue;
            }
            worst = worst.max(buf[y * pw + x].re / peak);
        }
    }
    worst
}

fn fft2(buf: &mut [Complex<f64>], w: usize, h: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut tmp = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            tmp[y] = buf[y * w + x];
        }
        col.process(&mut tmp);
        for y in 0..h {
            buf[y * w + x] = tmp[y];
        }
    }
}

// ---------------------------------------------------------------- export

impl PatternImage {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        self.pixels.write_png(path)
    }

    /// Wrap an arbitrary gray raster as a texture at `px_per_mm`.
    pub fn from_gray(pixels: GrayImage, px_per_mm: f64) -> Self {
        PatternImage {
            pixels,
            px_per_mm,
            stroke_width: 0.0,
        }
    }

    pub fn domain_mm(&self) -> f64 {
        self.pixels.width as f64 / self.px_per_mm
    }

    /// Rotate the texture by +90 degrees about its center, matching
    /// [`crate::math::Vec3::rotate_z`]: texel (x, y) moves to (h-1-y, x).
    pub fn rotated_90(&self) -> PatternImage {
        let (w, h) = (self.pixels.width, self.pixels.height);
        let mut out = GrayImage::new(h, w, 255);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.pixels.get(x, y));
            }
        }
        PatternImage {
            pixels: out,
            px_per_mm: self.px_per_mm,
            stroke_width: self.stroke_width,
        }
    }
}

/// SVG polyline of the tour in millimetre units.
pub fn tour_svg(tour: &Tour, ps: &PointSet, stroke_width: f64) -> String {
    let d = ps.domain_size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{d}mm" height="{d}mm" viewBox="0 0 {d} {d}">"#
    );
    let _ = write!(
        s,
        r#"<polyline fill="none" stroke="black" stroke-width="{stroke_width}" stroke-linecap="round" stroke-linejoin="round" points=""#
    );
    for (k, &i) in tour.order.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let p = ps.points[i];
        let _ = write!(s, "{:.5},{:.5}", p[0], p[1]);
    }
    s.push_str("\"/>\n</svg>\n");
    s
}

impl GeneratedPattern {
    pub fn sidecar(&self) -> PatternSidecar {
        PatternSidecar {
            seed: self.points.seed,
            n: self.points.points.len(),
            iterations: self.points.iterations,
            domain_mm: self.points.domain_size,
            px_per_mm: self.image.px_per_mm,
            stroke_mm: self.image.stroke_width,
            coverage: coverage_fraction(&self.image),
            tour_length_mm: self.tour.length,
        }
    }
}
