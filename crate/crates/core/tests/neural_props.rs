use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactforge_core::calib::{transfer_3dim, transfer_6dim, transfer_6dim_init, Dataset, TrainConfig};
use tactforge_core::neural::{
    grad_check, silog_loss, wrench_loss, Checkpoint, Model, ModelSpec, Task, Tensor, GRAD_EPS, SILOG_LAMBDA,
};
use tactforge_core::{RgbImage, WrenchRanges};

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, n)
}

fn t(v: Vec<f64>) -> Tensor {
    Tensor::new(vec![1, 1, 1, v.len()], v)
}

proptest! {
    #[test]
    fn silog_of_scaled_by_e(gt in positive(16)) {
        let pred: Vec<f64> = gt.iter().map(|g| g * std::f64::consts::E).collect();
        let l = silog_loss(&t(pred), &t(gt), SILOG_LAMBDA).unwrap();
        prop_assert!((l - 0.15f64.sqrt()).abs() <= 1e-9, "{}", l);
    }

    #[test]
    fn silog_with_unit_lambda_ignores_global_scale(pred in positive(16), gt in positive(16), c in 0.05f64..20.0) {
        let a = silog_loss(&t(pred.clone()), &t(gt.clone()), 1.0).unwrap();
        let b = silog_loss(&t(pred.iter().map(|p| p * c).collect()), &t(gt), 1.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn silog_matches_direct_formula(pred in positive(9), gt in positive(9), lambda in 0.0f64..1.0) {
        let d: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| p.ln() - g.ln()).collect();
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let m2 = d.iter().map(|x| x * x).sum::<f64>() / n;
        let oracle = (m2 - lambda * m * m).max(0.0).sqrt();
        let l = silog_loss(&t(pred), &t(gt), lambda).unwrap();
        prop_assert!((l - oracle).abs() <= 1e-9 * (1.0 + oracle));
    }

    #[test]
    fn wrench_loss_is_mean_square(a in prop::array::uniform6(-1.0f64..1.0), b in prop::array::uniform6(-1.0f64..1.0)) {
        let oracle = (0..6).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>() / 6.0;
        prop_assert!((wrench_loss(&a, &b) - oracle).abs() <= 1e-15);
        prop_assert_eq!(wrench_loss(&a, &a), 0.0);
        prop_assert_eq!(wrench_loss(&a, &b), wrench_loss(&b, &a));
    }
}

#[test]
fn wrench_loss_cases() {
    assert_eq!(wrench_loss(&[0.0; 6], &[0.0; 6]), 0.0);
    assert_eq!(wrench_loss(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 6]), 1.0 / 6.0);
    assert_eq!(wrench_loss(&[1.0; 6], &[-1.0; 6]), 4.0);
}

#[test]
fn silog_rejects_nonpositive_inputs() {
    assert!(silog_loss(&t(vec![0.0, 1.0]), &t(vec![1.0, 1.0]), 0.5).is_err());
    assert!(silog_loss(&t(vec![1.0, 1.0]), &t(vec![1.0, 1.0]), 1.5).is_err());
}

#[test]
fn tiny_models_pass_gradient_checks() {
    for task in [Task::Depth, Task::Wrench] {
        for seed in [1, 2] {
            let r = grad_check(&ModelSpec::tiny(task), seed, GRAD_EPS).unwrap();
            assert!(r.checked > 0);
            assert!(r.max_rel_error <= 1e-4, "{task:?} seed {seed}: {}", r.max_rel_error);
        }
    }
}

fn random_input(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random()).collect())
}

fn live_desk(task: Task) -> Model {
    let spec = ModelSpec { zero_init_output: false, ..ModelSpec::desk(task) };
    Model::new(spec, 4).unwrap()
}

#[test]
fn forward_is_identical_across_thread_counts() {
    for task in [Task::Depth, Task::Wrench] {
        let model = live_desk(task);
        let x = random_input(model.input_shape(3), 8);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| model.predict(&x).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert!(a.is_finite());
    }
}

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Depth, Task::Wrench] {
        let model = live_desk(task);
        let path = dir.path().join(format!("{task:?}.tfck"));
        let sha = Checkpoint::new(model.clone(), None).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.sha256().unwrap(), sha);
        let x = random_input(model.input_shape(2), 3);
        assert_eq!(model.predict(&x).unwrap().data, back.model.predict(&x).unwrap().data);
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes.truncate(mid);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}

fn wrench_set(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<RgbImage> = (0..n)
        .map(|_| RgbImage { width: 8, height: 8, data: (0..192).map(|_| rng.random()).collect() })
        .collect();
    let targets: Vec<[f64; 6]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
    Dataset::from_wrench_frames(&frames, &targets, WrenchRanges::default()).unwrap()
}

#[test]
fn saved_pretrained_model_feeds_both_transfer_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.tfck");
    let pre = Model::new(ModelSpec::tiny(Task::Wrench), 9).unwrap();
    Checkpoint::new(pre, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().model;

    let reference = RgbImage { width: 8, height: 8, data: vec![128; 192] };
    let plain = wrench_set(4, 1);
    let with_ref = wrench_set(4, 1).with_reference(&reference).unwrap();
    let cfg = TrainConfig { batch_size: 2, epochs: 1, ..TrainConfig::wrench() };
    let (m3, h3) = transfer_3dim(&loaded, &plain, &plain, &cfg).unwrap();
    let (m6, h6) = transfer_6dim(&loaded, &with_ref, &with_ref, &cfg).unwrap();
    assert_eq!(m3.spec.input_channels, 3);
    assert_eq!(m6.spec.input_channels, 6);
    assert!(h3.final_val_loss().unwrap().is_finite());
    assert!(h6.final_val_loss().unwrap().is_finite());
    let init = transfer_6dim_init(&loaded, 0).unwrap();
    assert_eq!(init.spec.input_channels, 6);
    // a 3-channel set cannot drive the 6-channel path
    assert!(transfer_6dim(&loaded, &plain, &plain, &cfg).is_err());
}
