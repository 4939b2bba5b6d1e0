use proptest::prelude::*;
use tactforge_core::evalreport::{
    depth_errors, depth_errors_many, emit_report, violin_stats, wrench_errors, Curve, Quantiles, Report, RunMetadata,
    KDE_POINTS, REPORT_SCHEMA,
};
use tactforge_core::{DepthCodec, GrayImage};

fn gray(n: usize, data: Vec<u8>) -> GrayImage {
    GrayImage { width: n, height: n, data }
}

fn depth_pairs() -> impl Strategy<Value = Vec<(GrayImage, GrayImage)>> {
    (1usize..6).prop_flat_map(|n| {
        prop::collection::vec(
            (prop::collection::vec(any::<u8>(), n * n), prop::collection::vec(any::<u8>(), n * n))
                .prop_map(move |(a, b)| (gray(n, a), gray(n, b))),
            0..6,
        )
    })
}

/// Linear interpolation between order statistics, written independently.
fn oracle_quantile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (s.len() - 1) as f64;
    let below = pos as usize;
    if below + 1 >= s.len() {
        return s[s.len() - 1];
    }
    let w = pos - below as f64;
    (1.0 - w) * s[below] + w * s[below + 1]
}

proptest! {
    #[test]
    fn quantiles_match_sort_oracle(v in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let q = Quantiles::of(&v).unwrap();
        let got = [q.q05, q.q25, q.q50, q.q75, q.q95];
        for (x, p) in got.iter().zip([0.05, 0.25, 0.5, 0.75, 0.95]) {
            let o = oracle_quantile(&v, p);
            prop_assert!((x - o).abs() <= 1e-9 * (1.0 + o.abs()), "p={} {} vs {}", p, x, o);
        }
        prop_assert!(got.windows(2).all(|w| w[0] <= w[1]));
        if v.len() % 2 == 1 {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            prop_assert_eq!(q.q50, s[v.len() / 2]);
        }
    }

    #[test]
    fn millimetres_are_pixel_errors_times_step(pairs in depth_pairs()) {
        let codec = DepthCodec::default();
        let refs: Vec<(&GrayImage, &GrayImage)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let stats = depth_errors_many(&refs, &codec).unwrap();
        prop_assert_eq!(stats.frames, pairs.len());
        let mut all_mm = Vec::new();
        for (i, (p, g)) in pairs.iter().enumerate() {
            let mm: Vec<f64> = p.data.iter().zip(&g.data)
                .map(|(a, b)| (codec.decode_value(*a) - codec.decode_value(*b)).abs())
                .collect();
            let l1 = mm.iter().sum::<f64>() / mm.len() as f64;
            let rms = (mm.iter().map(|x| x * x).sum::<f64>() / mm.len() as f64).sqrt();
            prop_assert!((stats.per_frame_l1_mm[i] - l1).abs() <= 1e-9);
            prop_assert!((stats.per_frame_rms_mm[i] - rms).abs() <= 1e-9);
            let single = depth_errors(p, g, &codec).unwrap();
            prop_assert_eq!(single.per_frame_l1_mm[0], stats.per_frame_l1_mm[i]);
            all_mm.extend(mm);
        }
        match stats.mean_l1_mm {
            None => prop_assert!(all_mm.is_empty()),
            Some(m) => {
                let o = all_mm.iter().sum::<f64>() / all_mm.len() as f64;
                prop_assert!((m - o).abs() <= 1e-9);
                // integer pixel sums make the pooled value exact
                let pix: u64 = pairs.iter().flat_map(|(p, g)| p.data.iter().zip(&g.data))
                    .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs()).sum();
                prop_assert_eq!(m, codec.step * (pix as f64 / all_mm.len() as f64));
            }
        }
    }

    #[test]
    fn wrench_mae_matches_oracle(rows in prop::collection::vec((prop::array::uniform6(-5.0f64..5.0), prop::array::uniform6(-5.0f64..5.0)), 1..20)) {
        let preds: Vec<[f64; 6]> = rows.iter().map(|r| r.0).collect();
        let gts: Vec<[f64; 6]> = rows.iter().map(|r| r.1).collect();
        let s = wrench_errors(&preds, &gts).unwrap();
        for a in 0..6 {
            let o = rows.iter().map(|(p, g)| (p[a] - g[a]).abs()).sum::<f64>() / rows.len() as f64;
            prop_assert!((s.per_axis_mae[a] - o).abs() <= 1e-12);
        }
        let g = s.groups.unwrap();
        prop_assert!((g.f_xy - 0.5 * (s.per_axis_mae[0] + s.per_axis_mae[1])).abs() <= 1e-15);
        prop_assert_eq!(g.t_z, s.per_axis_mae[5]);
    }

    #[test]
    fn violin_density_integrates_to_about_one(v in prop::collection::vec(0.0f64..10.0, 2..40)) {
        let vs = violin_stats(&v).unwrap();
        prop_assert_eq!(vs.kde_x.len(), KDE_POINTS);
        prop_assert!(vs.bandwidth > 0.0);
        let dx = vs.kde_x[1] - vs.kde_x[0];
        let area: f64 = vs.kde_y.iter().sum::<f64>() * dx;
        prop_assert!((area - 1.0).abs() < 0.02, "area {}", area);
    }
}

fn sample_report() -> Report {
    let codec = DepthCodec::default();
    let p = gray(4, (0..16).map(|i| i * 7).collect());
    let g = gray(4, (0..16).map(|i| i * 6 + 3).collect());
    let depth = depth_errors_many(&[(&p, &g), (&g, &g)], &codec).unwrap();
    let preds = vec![[0.1, 0.2, -1.0, 0.01, 0.0, 0.3], [0.0; 6], [1.0, -1.0, 2.0, 0.5, 0.5, -0.5]];
    let gts = vec![[0.0; 6], [0.1; 6], [1.0, -1.2, 2.5, 0.4, 0.5, -0.1]];
    let wrench = wrench_errors(&preds, &gts).unwrap();
    let mut r = Report::new(RunMetadata {
        tool_version: "test".into(),
        checkpoint_sha256: Some("ab".repeat(32)),
        seed: Some(3),
        task: Some("wrench".into()),
        ..RunMetadata::default()
    })
    .with_depth(depth)
    .unwrap()
    .with_wrench(wrench, Some(0.05))
    .unwrap();
    r.curves.push(Curve { name: "val_loss".into(), points: vec![[0.0, 1.0], [10.0, 0.5]] });
    r
}

fn validator() -> jsonschema::Validator {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn emitted_reports_satisfy_the_schema() {
    let v = validator();
    for report in [sample_report(), Report::new(RunMetadata::default())] {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        let errors: Vec<String> = v.iter_errors(&json).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
        let back: Report = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }
}

#[test]
fn schema_rejects_malformed_reports() {
    let v = validator();
    let mut json = serde_json::to_value(sample_report()).unwrap();
    assert!(v.is_valid(&json));
    json["metadata"]["seed"] = serde_json::json!("three");
    assert!(!v.is_valid(&json));
    let mut json = serde_json::to_value(sample_report()).unwrap();
    json.as_object_mut().unwrap().remove("curves");
    assert!(!v.is_valid(&json));
}

#[test]
fn emitting_twice_gives_identical_files() {
    let r = sample_report();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_report(&r, a.path()).unwrap();
    let fb = emit_report(&r, b.path()).unwrap();
    assert_eq!(fa.len(), 8);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}
