use rayon::prelude::*;

use super::{DepthMap, SensorGeometry};
use crate::error::{Error, Result};
use crate::math::exact_sum;

/// Outcome of redistributing the displaced volume.
#[derive(Debug, Clone)]
pub struct BulgeResult {
    pub depth: DepthMap,
    /// Volume pushed in by the contact, mm^3.
    pub displaced_volume: f64,
    /// Peak outward displacement (mm) before clamping.
    pub amplitude: f64,
    pub clamped_high: usize,
    pub clamped_low: usize,
    /// The contact covers the whole cap, so no volume could be placed.
    pub conservation_impossible: bool,
}

/// Volume-conserving outward bulge, clamped to `[d_min, d_max]`.
pub fn apply_bulge(contact: &DepthMap, geom: &SensorGeometry, sigma_deg: f64) -> Result<BulgeResult> {
    let mut res = bulge_field(contact, geom, sigma_deg)?;
    let mut hi = 0;
    let mut lo = 0;
    for v in res.depth.values.iter_mut() {
        if *v > geom.d_max {
            *v = geom.d_max;
            hi += 1;
        } else if *v < geom.d_min {
            *v = geom.d_min;
            lo += 1;
        }
    }
    res.clamped_high = hi;
    res.clamped_low = lo;
    Ok(res)
}

/// Unclamped bulge: the displaced volume `sum (r0^3 - r^3)/3 dOmega` is put
/// back on non-contact directions as `r0 + a * w`, where `w` is a Gaussian
/// of the geodesic angle to the nearest contact direction and `a` solves the
/// volume balance exactly.
pub fn bulge_field(contact: &DepthMap, geom: &SensorGeometry, sigma_deg: f64) -> Result<BulgeResult> {
    geom.validate()?;
    if contact.width != geom.grid.width || contact.height != geom.grid.height {
        return Err(Error::invalid("depth map does not match the sensor grid"));
    }
    if !(sigma_deg > 0.0) {
        return Err(Error::invalid("bulge sigma must be positive"));
    }
    let r0 = geom.r_nominal;
    let samples = geom.samples();
    let (w, h) = (contact.width, contact.height);
    let is_contact = |k: usize| samples[k].on_cap && contact.values[k] < r0;

    let displaced = exact_sum((0..w * h).filter(|&k| is_contact(k)).map(|k| {
        let r = contact.values[k];
        (r0 * r0 * r0 - r * r * r) / 3.0 * samples[k].solid_angle
    }));
    let free: Vec<usize> = (0..w * h).filter(|&k| samples[k].on_cap && !is_contact(k)).collect();

    let mut out = BulgeResult {
        depth: contact.clone(),
        displaced_volume: displaced,
        amplitude: 0.0,
        clamped_high: 0,
        clamped_low: 0,
        conservation_impossible: false,
    };
    if displaced == 0.0 {
        return Ok(out);
    }
    if free.is_empty() {
        out.conservation_impossible = true;
        return Ok(out);
    }

    // Boundary contact directions are enough for the nearest-contact angle.
    let boundary: Vec<usize> = (0..w * h)
        .filter(|&k| is_contact(k))
        .filter(|&k| {
            let (row, col) = (k / w, k % w);
            let mut edge = false;
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (r, c) = (row as i64 + dr, col as i64 + dc);
                if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 || !is_contact(r as usize * w + c as usize) {
                    edge = true;
                }
            }
            edge
        })
        .collect();
    let sigma = sigma_deg.to_radians();
    let weights: Vec<f64> = free
        .par_iter()
        .map(|&k| {
            let d = samples[k].dir;
            let best = boundary
                .iter()
                .map(|&b| samples[b].dir.dot(d))
                .fold(-1.0f64, f64::max)
                .clamp(-1.0, 1.0);
            let gamma = best.acos();
            (-0.5 * (gamma / sigma).powi(2)).exp()
        })
        .collect();

    let added = |a: f64| {
        exact_sum(free.iter().zip(&weights).map(|(&k, &wt)| {
            let r = r0 + a * wt;
            (r * r * r - r0 * r0 * r0) / 3.0 * samples[k].solid_angle
        }))
    };
    let slope0 = exact_sum(free.iter().zip(&weights).map(|(&k, &wt)| r0 * r0 * wt * samples[k].solid_angle));
    if !(slope0 > 0.0) {
        out.conservation_impossible = true;
        return Ok(out);
    }
    // added(a) is convex and increasing for a >= 0: Newton from the linear
    // guess converges monotonically from above.
    let mut a = displaced / slope0;
    for _ in 0..60 {
        let f = added(a) - displaced;
        let df = exact_sum(free.iter().zip(&weights).map(|(&k, &wt)| {
            let r = r0 + a * wt;
            r * r * wt * samples[k].solid_angle
        }));
        let step = f / df;
        a -= step;
        if step.abs() <= 1e-15 * a.abs() {
            break;
        }
    }
    for (&k, &wt) in free.iter().zip(&weights) {
        out.depth.values[k] = r0 + a * wt;
    }
    out.amplitude = a;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gelsim::{analytic_sphere_indent, enclosed_volume, undeformed};
    use crate::math::Vec3;

    #[test]
    fn undeformed_in_undeformed_out() {
        let g = SensorGeometry::with_grid(32);
        let u = undeformed(&g);
        let b = apply_bulge(&u, &g, 20.0).unwrap();
        assert_eq!(b.depth, u);
        assert_eq!(b.displaced_volume, 0.0);
    }

    #[test]
    fn central_press_conserves_volume() {
        let g = SensorGeometry::with_grid(64);
        let c = analytic_sphere_indent(&g, Vec3::new(0.0, 0.0, 18.5), 5.0).unwrap();
        let v0 = enclosed_volume(&undeformed(&g), &g);
        let b = bulge_field(&c, &g, 20.0).unwrap();
        let v1 = enclosed_volume(&b.depth, &g);
        assert!(((v1 - v0) / v0).abs() <= 0.005);
        assert!(b.amplitude > 0.0);
        let clamped = apply_bulge(&c, &g, 20.0).unwrap();
        assert!(clamped.depth.values.iter().all(|&v| v <= 16.88));
    }

    #[test]
    fn full_cap_contact_cannot_conserve() {
        let g = SensorGeometry::with_grid(16);
        let mut c = undeformed(&g);
        for v in c.values.iter_mut() {
            *v = 15.0;
        }
        let b = apply_bulge(&c, &g, 20.0).unwrap();
        assert!(b.conservation_impossible);
    }
}
