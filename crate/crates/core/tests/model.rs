//! Whole-network behaviour: shapes, batch equivariance, golden logits, head
//! replacement and head-only training.

use std::path::PathBuf;

use lungline_core::arch::{build_mobilenet_v2, build_mobilenet_v2_seeded, HEAD_BIAS, HEAD_WEIGHT};
use lungline_core::finetune::{finetune_head, one_cycle_lr, FeatureSet, TrainConfig};
use lungline_core::rng::SeedStream;
use lungline_core::weights::{bind_weights, WeightContainer};
use lungline_core::{Error, Tensor};

fn seeded_input(seed: u64, n: usize) -> Tensor {
    let mut rng = SeedStream::new(seed);
    Tensor::from_fn(&[n, 3, 224, 224], |_| rng.uniform(-1.0, 1.0) as f32).unwrap()
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mobilenet_v2_seed7.txt")
}

/// Set `LUNGLINE_BLESS=1` to rewrite the golden file after an intentional
/// numeric change.
#[test]
fn seeded_logits_match_golden_file() {
    let model = build_mobilenet_v2_seeded(3, 1.0, 7)
        .unwrap()
        .bind_initialized();
    let logits = model.forward(&seeded_input(11, 1)).unwrap();
    assert_eq!(logits.dims(), &[1, 3]);
    let rendered: String = logits
        .data()
        .iter()
        .map(|v| format!("{:08x} {v:e}\n", v.to_bits()))
        .collect();
    if std::env::var_os("LUNGLINE_BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &rendered).unwrap();
    }
    let stored = std::fs::read_to_string(golden_path()).expect("golden file present");
    let want: Vec<u32> = stored
        .lines()
        .map(|l| u32::from_str_radix(l.split_whitespace().next().unwrap(), 16).unwrap())
        .collect();
    let got: Vec<u32> = logits.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(got, want);
}

#[test]
fn batch_rows_equal_single_image_passes() {
    let model = build_mobilenet_v2_seeded(3, 1.0, 3)
        .unwrap()
        .bind_initialized();
    let batch = seeded_input(5, 2);
    let out = model.forward(&batch).unwrap();
    assert_eq!(out.dims(), &[2, 3]);
    for i in 0..2 {
        let single = model
            .forward(
                &batch
                    .slice_outer(i)
                    .unwrap()
                    .reshape(&[1, 3, 224, 224])
                    .unwrap(),
            )
            .unwrap();
        for (a, b) in single.data().iter().zip(&out.data()[i * 3..(i + 1) * 3]) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
    let one = batch.slice_outer(0).unwrap();
    let twins = Tensor::stack(&[one.clone(), one]).unwrap();
    let out = model.forward(&twins).unwrap();
    assert_eq!(out.data()[..3], out.data()[3..]);
}

#[test]
fn forward_leaves_the_model_untouched() {
    let model = build_mobilenet_v2_seeded(2, 1.0, 1)
        .unwrap()
        .bind_initialized();
    let before = model.clone();
    model.forward(&seeded_input(2, 1)).unwrap();
    assert_eq!(model, before);
}

#[test]
fn forward_errors() {
    let unbound = build_mobilenet_v2(3, 1.0).unwrap();
    assert!(matches!(
        unbound.forward(&seeded_input(1, 1)),
        Err(Error::State(_))
    ));
    let bound = unbound.bind_initialized();
    let wrong = Tensor::zeros(&[1, 3, 32, 32]).unwrap();
    assert!(matches!(bound.forward(&wrong), Err(Error::Shape(_))));
}

#[test]
fn imported_head_is_replaced_without_touching_the_backbone() {
    let imagenet = build_mobilenet_v2_seeded(1000, 1.0, 99).unwrap();
    let container = WeightContainer::from_model(&imagenet);
    let (bound, _) = bind_weights(build_mobilenet_v2(1000, 1.0).unwrap(), &container).unwrap();
    let before = bound.count_params().total;
    let three = bound.clone().replace_head(3, 4).unwrap();
    assert!(three.is_bound());
    assert_eq!(three.num_classes(), 3);
    assert_eq!(
        three.count_params().total,
        before - (1280 * 1000 + 1000) + (1280 * 3 + 3)
    );
    for name in bound
        .param_names()
        .filter(|n| *n != HEAD_WEIGHT && *n != HEAD_BIAS)
    {
        let a: Vec<u32> = bound
            .param(name)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let b: Vec<u32> = three
            .param(name)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b, "{name}");
    }
    let again = bound.replace_head(3, 4).unwrap();
    assert_eq!(again.param(HEAD_WEIGHT), three.param(HEAD_WEIGHT));
    assert_eq!(again.param(HEAD_BIAS), three.param(HEAD_BIAS));
    let bound = 1.0 / 1280f32.sqrt();
    assert!(three
        .param(HEAD_WEIGHT)
        .unwrap()
        .data()
        .iter()
        .all(|v| v.abs() <= bound));
}

fn normal(rng: &mut SeedStream) -> f32 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

/// Two Gaussian blobs centred at ±`sep` along a random unit direction.
fn blobs(n: usize, width: usize, sep: f32, seed: u64) -> FeatureSet {
    let mut rng = SeedStream::new(seed);
    let mut dir: Vec<f32> = (0..width).map(|_| normal(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f32>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut data = Vec::with_capacity(n * width);
    for &l in &labels {
        let s = if l == 0 { -sep } else { sep };
        for d in &dir {
            data.push(s * d + normal(&mut rng) * 0.1);
        }
    }
    FeatureSet::new(Tensor::new(&[n, width], data).unwrap(), labels).unwrap()
}

#[test]
fn head_training_separates_blobs_and_freezes_the_backbone() {
    let model = build_mobilenet_v2_seeded(2, 1.0, 8)
        .unwrap()
        .bind_initialized();
    let train = blobs(64, 1280, 3.0, 21);
    let val = blobs(16, 1280, 3.0, 22);
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let (trained, history) = finetune_head(model.clone(), &train, Some(&val), &cfg).unwrap();

    assert_eq!(history.epochs.len(), 30);
    assert_eq!(history.epochs.last().unwrap().train_acc, 1.0);
    for w in history.epochs.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss * 1.05, "{w:?}");
    }
    let total = history.lr_trace.len();
    assert_eq!(total, 30 * 2);
    for (s, &lr) in history.lr_trace.iter().enumerate() {
        assert_eq!(lr, one_cycle_lr(s, total, cfg.max_lr).unwrap());
    }
    for name in model
        .param_names()
        .filter(|n| *n != HEAD_WEIGHT && *n != HEAD_BIAS)
    {
        assert_eq!(model.param(name), trained.param(name), "{name}");
    }
    assert_ne!(model.param(HEAD_WEIGHT), trained.param(HEAD_WEIGHT));

    let (again, history2) = finetune_head(model, &train, Some(&val), &cfg).unwrap();
    assert_eq!(history, history2);
    assert_eq!(again, trained);
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let model = build_mobilenet_v2_seeded(2, 1.0, 8)
        .unwrap()
        .bind_initialized();
    let mut set = blobs(8, 1280, 1.0, 1);
    set.labels[0] = 2;
    assert!(matches!(
        finetune_head(model, &set, None, &TrainConfig::default()),
        Err(Error::Config(_))
    ));
}
