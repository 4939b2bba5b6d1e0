use anyhow::{bail, Result};
use tactforge_core::dataio::{psnr, similarity};
use tactforge_core::gelsim::{raycast_indent, IndenterShape};
use tactforge_core::neural::{grad_check, ModelSpec, Task, GRAD_EPS};
use tactforge_core::wrench::{compute_wrench, FoundationParams};
use tactforge_core::{DepthCodec, RgbImage, SensorGeometry, Vec3};

struct Check {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn codec_roundtrip() -> Check {
    let c = DepthCodec::default();
    let bad = (0..=255u8).filter(|&p| c.encode_value(c.decode_value(p)).0 != p).count();
    let nominal = c.encode_value(15.5).0;
    Check {
        name: "codec round trip",
        ok: bad == 0 && nominal == 180,
        detail: format!("{bad} mismatched pixels, encode(15.5 mm) = {nominal}"),
    }
}

fn gradients() -> Result<Check> {
    let d = grad_check(&ModelSpec::tiny(Task::Depth), 1, GRAD_EPS)?;
    let w = grad_check(&ModelSpec::tiny(Task::Wrench), 1, GRAD_EPS)?;
    let worst = d.max_rel_error.max(w.max_rel_error);
    Ok(Check {
        name: "gradient check",
        ok: worst <= 1e-4,
        detail: format!("max relative error {worst:.2e} over {} parameters", d.checked + w.checked),
    })
}

fn press(geom: &SensorGeometry, x: f64) -> Result<[f64; 6]> {
    let (r, p) = (5.0, 2.0);
    let center = Vec3::new(x, 0.0, geom.r_nominal - p + r);
    let ind = raycast_indent(geom, &IndenterShape::Sphere { center, radius: r })?;
    Ok(compute_wrench(&ind.depth, geom, &FoundationParams::default())?.to_array())
}

fn wrench_symmetry() -> Result<Check> {
    let geom = SensorGeometry::with_grid(64);
    let w = press(&geom, 0.0)?;
    let fz = w[2].abs();
    let off = [w[0], w[1], w[3], w[4], w[5]].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let right = press(&geom, 2.0)?;
    let left = press(&geom, -2.0)?;
    let mirrored = right[0] == -left[0];
    Ok(Check {
        name: "wrench symmetry",
        ok: fz > 0.0 && off <= 1e-9 * fz && mirrored,
        detail: format!("central off-axis {off:.1e} vs |Fz| {fz:.3}; mirrored Fx {} / {}", right[0], left[0]),
    })
}

fn psnr_identity() -> Result<Check> {
    let img = RgbImage {
        width: 4,
        height: 4,
        data: (0..48).map(|i| (i * 5) as u8).collect(),
    };
    let db = psnr(&img, &img)?;
    let s = similarity(&img, &img)?;
    Ok(Check {
        name: "psnr identity",
        ok: s == 1.0,
        detail: format!("{db} dB, similarity {s}"),
    })
}

pub fn run() -> Result<()> {
    let checks = vec![codec_roundtrip(), gradients()?, wrench_symmetry()?, psnr_identity()?];
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.ok { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.ok);
    }
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}
