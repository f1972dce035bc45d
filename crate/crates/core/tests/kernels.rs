//! Numeric kernels against independent scalar-loop and finite-difference
//! oracles.

use lungline_core::finetune::head_gradients;
use lungline_core::rng::SeedStream;
use lungline_core::tensor::{
    batchnorm_infer, conv2d, cross_entropy, global_avg_pool, linear, relu6, softmax,
    BatchNormParams, ConvParams,
};
use lungline_core::Tensor;
use proptest::prelude::*;

fn random_tensor(rng: &mut SeedStream, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.uniform(-1.0, 1.0) as f32).unwrap()
}

/// Relative error that demands exact agreement at zero.
fn rel_err(got: f32, want: f32) -> f64 {
    if got == want {
        return 0.0;
    }
    ((got - want).abs() / want.abs()) as f64
}

struct ConvCase {
    x: Tensor,
    w: Tensor,
    b: Option<Tensor>,
    p: ConvParams,
}

fn conv_case(rng: &mut SeedStream, depthwise: bool) -> ConvCase {
    let mut pick = |lo: u64, hi: u64| (lo + rng.below(hi - lo + 1)) as usize;
    let n = pick(1, 2);
    let c = pick(1, 8);
    let kh = pick(1, 5);
    let kw = pick(1, 5);
    let padding = pick(0, 2);
    let h = pick((kh.saturating_sub(2 * padding)).max(1) as u64, 8);
    let w = pick((kw.saturating_sub(2 * padding)).max(1) as u64, 8);
    let stride = pick(1, 3);
    let (o, groups) = if depthwise { (c, c) } else { (pick(1, 8), 1) };
    let with_bias = pick(0, 1) == 1;
    let x = random_tensor(rng, &[n, c, h, w]);
    let wt = random_tensor(rng, &[o, c / groups, kh, kw]);
    let b = with_bias.then(|| random_tensor(rng, &[o]));
    ConvCase {
        x,
        w: wt,
        b,
        p: ConvParams {
            stride,
            padding,
            groups,
        },
    }
}

/// Six nested loops over (n, o, y, x, ci, ky, kx) reading the padded input
/// by explicit bounds checks. Returns f32 in the declared summation order and
/// an f64 reference with the per-element sum of absolute terms.
fn conv_oracle(case: &ConvCase) -> (Vec<usize>, Vec<f32>, Vec<(f64, f64)>) {
    let d = case.x.dims();
    let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
    let k = case.w.dims();
    let (o, cg, kh, kw) = (k[0], k[1], k[2], k[3]);
    let ConvParams {
        stride,
        padding,
        groups,
    } = case.p;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let og = o / groups;
    let xv = |b: usize, ch: usize, y: isize, xx: isize| -> Option<f32> {
        (y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w)
            .then(|| case.x.data()[((b * c + ch) * h + y as usize) * w + xx as usize])
    };
    let mut out32 = Vec::new();
    let mut out64 = Vec::new();
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    let (mut acc64, mut mag) = (0.0f64, 0.0f64);
                    for ci in 0..cg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - padding as isize;
                                let xx = (ox * stride + kx) as isize - padding as isize;
                                if let Some(v) = xv(b, g * cg + ci, y, xx) {
                                    let wv = case.w.data()[((oc * cg + ci) * kh + ky) * kw + kx];
                                    acc += v * wv;
                                    acc64 += v as f64 * wv as f64;
                                    mag += (v as f64 * wv as f64).abs();
                                }
                            }
                        }
                    }
                    if let Some(bias) = &case.b {
                        acc += bias.data()[oc];
                        acc64 += bias.data()[oc] as f64;
                        mag += (bias.data()[oc] as f64).abs();
                    }
                    out32.push(acc);
                    out64.push((acc64, mag));
                }
            }
        }
    }
    (vec![n, o, oh, ow], out32, out64)
}

#[test]
fn conv2d_matches_direct_loops_on_random_instances() {
    let mut rng = SeedStream::new(0xC0FFEE);
    let mut worst = 0.0f64;
    let mut worst_scaled = 0.0f64;
    for i in 0..1000 {
        let case = conv_case(&mut rng, i % 2 == 1);
        let got = conv2d(&case.x, &case.w, case.b.as_ref(), case.p).unwrap();
        let (dims, want, want64) = conv_oracle(&case);
        assert_eq!(got.dims(), dims.as_slice(), "instance {i}");
        for ((&g, &w), &(r, mag)) in got.data().iter().zip(&want).zip(&want64) {
            worst = worst.max(rel_err(g, w));
            if mag > 0.0 {
                worst_scaled = worst_scaled.max((g as f64 - r).abs() / mag);
            }
        }
    }
    assert!(worst <= 1e-6, "max rel error {worst:e}");
    assert!(worst_scaled <= 1e-6, "f64 reference error {worst_scaled:e}");
}

#[test]
fn depthwise_equals_per_channel_correlation() {
    let mut rng = SeedStream::new(42);
    let x = random_tensor(&mut rng, &[2, 4, 8, 8]);
    let w = random_tensor(&mut rng, &[4, 1, 3, 3]);
    let p = ConvParams {
        stride: 2,
        padding: 1,
        groups: 4,
    };
    let full = conv2d(&x, &w, None, p).unwrap();
    for b in 0..2 {
        for ch in 0..4 {
            let plane = Tensor::new(
                &[1, 1, 8, 8],
                x.data()[(b * 4 + ch) * 64..(b * 4 + ch + 1) * 64].to_vec(),
            )
            .unwrap();
            let k = Tensor::new(&[1, 1, 3, 3], w.data()[ch * 9..(ch + 1) * 9].to_vec()).unwrap();
            let single = conv2d(&plane, &k, None, ConvParams { groups: 1, ..p }).unwrap();
            assert_eq!(
                single.data(),
                &full.data()[(b * 4 + ch) * 16..(b * 4 + ch + 1) * 16]
            );
        }
    }
}

#[test]
fn conv2d_is_deterministic() {
    let mut rng = SeedStream::new(9);
    let case = conv_case(&mut rng, false);
    let a = conv2d(&case.x, &case.w, case.b.as_ref(), case.p).unwrap();
    let b = conv2d(&case.x, &case.w, case.b.as_ref(), case.p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batchnorm_matches_elementwise_oracle() {
    let mut rng = SeedStream::new(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c = 1 + rng.below(6) as usize;
        let x = random_tensor(&mut rng, &[2, c, 3, 4]);
        let gamma = random_tensor(&mut rng, &[c]);
        let beta = random_tensor(&mut rng, &[c]);
        let mean = random_tensor(&mut rng, &[c]);
        let var = Tensor::from_fn(&[c], |_| rng.uniform(0.01, 3.0) as f32).unwrap();
        let eps = 1e-5f32;
        let y = batchnorm_infer(
            &x,
            BatchNormParams {
                gamma: &gamma,
                beta: &beta,
                running_mean: &mean,
                running_var: &var,
                eps,
            },
        )
        .unwrap();
        for (i, (&got, &xv)) in y.data().iter().zip(x.data()).enumerate() {
            let ch = (i / 12) % c;
            let want = gamma.data()[ch] * ((xv - mean.data()[ch]) / (var.data()[ch] + eps).sqrt())
                + beta.data()[ch];
            worst = worst.max(rel_err(got, want));
        }
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn batchnorm_examples() {
    let one = |v: f32| Tensor::new(&[1], vec![v]).unwrap();
    let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
    let y = batchnorm_infer(
        &x,
        BatchNormParams {
            gamma: &one(2.0),
            beta: &one(1.0),
            running_mean: &one(1.0),
            running_var: &one(4.0),
            eps: 0.0,
        },
    )
    .unwrap();
    assert_eq!(y.data(), &[3.0]);
    let mut rng = SeedStream::new(1);
    let x = random_tensor(&mut rng, &[1, 1, 4, 4]);
    let y = batchnorm_infer(
        &x,
        BatchNormParams {
            gamma: &one(1.0),
            beta: &one(0.0),
            running_mean: &one(0.0),
            running_var: &one(1.0),
            eps: 0.0,
        },
    )
    .unwrap();
    assert_eq!(y, x);
    let bad = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
    assert!(batchnorm_infer(
        &x,
        BatchNormParams {
            gamma: &bad,
            beta: &one(0.0),
            running_mean: &one(0.0),
            running_var: &one(1.0),
            eps: 1e-5,
        }
    )
    .is_err());
}

#[test]
fn pool_and_linear_match_oracles() {
    let mut rng = SeedStream::new(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, c, h, w) = (
            1 + rng.below(3) as usize,
            1 + rng.below(5) as usize,
            1 + rng.below(7) as usize,
            1 + rng.below(7) as usize,
        );
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let p = global_avg_pool(&x).unwrap();
        assert_eq!(p.dims(), &[n, c]);
        for (plane, &got) in x.data().chunks(h * w).zip(p.data()) {
            let mut acc = 0.0f32;
            for &v in plane {
                acc += v;
            }
            worst = worst.max(rel_err(got, acc / (h * w) as f32));
            let exact = plane.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
            let scale = plane.iter().map(|&v| (v as f64).abs()).sum::<f64>() / (h * w) as f64;
            assert!((got as f64 - exact).abs() <= 1e-6 * scale);
        }

        let (k, f) = (1 + rng.below(5) as usize, 1 + rng.below(9) as usize);
        let xs = random_tensor(&mut rng, &[n, f]);
        let wt = random_tensor(&mut rng, &[k, f]);
        let b = random_tensor(&mut rng, &[k]);
        let y = linear(&xs, &wt, &b).unwrap();
        for r in 0..n {
            for o in 0..k {
                let mut acc = 0.0f32;
                for j in 0..f {
                    acc += xs.data()[r * f + j] * wt.data()[o * f + j];
                }
                worst = worst.max(rel_err(y.data()[r * k + o], acc + b.data()[o]));
            }
        }
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn pool_and_linear_examples() {
    let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    let c = Tensor::full(&[2, 3, 5, 5], 0.7).unwrap();
    assert!(global_avg_pool(&c)
        .unwrap()
        .data()
        .iter()
        .all(|&v| (v - 0.7).abs() < 1e-6));
    let xs = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
    let zero = Tensor::zeros(&[3]).unwrap();
    assert_eq!(linear(&xs, &eye, &zero).unwrap().data(), xs.data());
    let b0 = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let y = linear(&xs, &Tensor::zeros(&[3, 3]).unwrap(), &b0).unwrap();
    assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn softmax_examples() {
    let z = Tensor::zeros(&[1, 3]).unwrap();
    for &p in softmax(&z).unwrap().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-7);
    }
    let z = Tensor::new(&[1, 3], vec![0.0, 2f32.ln(), 3f32.ln()]).unwrap();
    let p = softmax(&z).unwrap();
    for (got, want) in p.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn cross_entropy_examples() {
    let z = Tensor::zeros(&[1, 3]).unwrap();
    let (loss, _) = cross_entropy(&z, &[1]).unwrap();
    assert!((loss - 3f32.ln()).abs() < 1e-6);
    let z = Tensor::new(&[1, 3], vec![-50.0, 50.0, -50.0]).unwrap();
    let (loss, _) = cross_entropy(&z, &[1]).unwrap();
    assert!(loss < 1e-6);
    assert!(cross_entropy(&z, &[3]).is_err());
}

fn ce64(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (row, &l) in logits.chunks(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / n as f64
}

/// Relative error between an analytic and a numeric derivative. Entries whose
/// true magnitude is below `floor` are compared on the floor's scale, since
/// a relative error of a vanishing quantity measures only the difference
/// step's truncation noise.
fn grad_rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

const H: f64 = 1e-3;
const FLOOR: f64 = 1e-3;

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = SeedStream::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z = random_tensor(&mut rng, &[2, 3]);
        let labels = [rng.below(3) as usize, rng.below(3) as usize];
        let (_, g) = cross_entropy(&z, &labels).unwrap();
        let base: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        for i in 0..base.len() {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += H;
            dn[i] -= H;
            let num = (ce64(&up, 3, &labels) - ce64(&dn, 3, &labels)) / (2.0 * H);
            worst = worst.max(grad_rel_err(g.data()[i] as f64, num, FLOOR));
        }
        for row in g.data().chunks(3) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
    }
    assert!(worst <= 1e-4, "{worst:e}");
}

fn head_loss64(x: &[f64], w: &[f64], b: &[f64], f: usize, k: usize, labels: &[usize]) -> f64 {
    let logits: Vec<f64> = x
        .chunks(f)
        .flat_map(|row| {
            (0..k).map(move |o| b[o] + (0..f).map(|j| row[j] * w[o * f + j]).sum::<f64>())
        })
        .collect();
    ce64(&logits, k, labels)
}

#[test]
fn head_gradients_match_finite_differences() {
    let (n, f, k) = (4, 8, 3);
    let mut rng = SeedStream::new(31337);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_tensor(&mut rng, &[n, f]);
        let w = random_tensor(&mut rng, &[k, f]);
        let b = random_tensor(&mut rng, &[k]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let hg = head_gradients(&x, &w, &b, &labels).unwrap();
        let to64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let (x64, w64, b64) = (to64(&x), to64(&w), to64(&b));

        let direct = head_loss64(&x64, &w64, &b64, f, k, &labels);
        assert!((hg.loss as f64 - direct).abs() < 1e-5);

        for i in 0..w64.len() {
            let (mut up, mut dn) = (w64.clone(), w64.clone());
            up[i] += H;
            dn[i] -= H;
            let num = (head_loss64(&x64, &up, &b64, f, k, &labels)
                - head_loss64(&x64, &dn, &b64, f, k, &labels))
                / (2.0 * H);
            worst = worst.max(grad_rel_err(hg.d_weight.data()[i] as f64, num, FLOOR));
        }
        for i in 0..k {
            let (mut up, mut dn) = (b64.clone(), b64.clone());
            up[i] += H;
            dn[i] -= H;
            let num = (head_loss64(&x64, &w64, &up, f, k, &labels)
                - head_loss64(&x64, &w64, &dn, f, k, &labels))
                / (2.0 * H);
            worst = worst.max(grad_rel_err(hg.d_bias.data()[i] as f64, num, FLOOR));
        }
    }
    assert!(worst <= 1e-4, "{worst:e}");
}

fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..5, 1usize..7).prop_flat_map(|(n, k)| {
        proptest::collection::vec(-30.0f32..30.0, n * k).prop_map(move |v| (n, k, v))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((n, k, data) in small_matrix(), shift in -50.0f32..50.0) {
        let z = Tensor::new(&[n, k], data.clone()).unwrap();
        let p = softmax(&z).unwrap();
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let shifted = Tensor::new(&[n, k], data.iter().map(|v| v + shift).collect()).unwrap();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn relu6_is_clamped_and_idempotent(data in proptest::collection::vec(-100.0f32..100.0, 1..64)) {
        let x = Tensor::new(&[data.len()], data).unwrap();
        let y = relu6(&x);
        prop_assert!(y.data().iter().all(|&v| (0.0..=6.0).contains(&v)));
        prop_assert_eq!(relu6(&y), y);
    }

    #[test]
    fn cross_entropy_is_nonnegative_with_zero_sum_rows(
        (n, k, data) in small_matrix(),
        seed in any::<u64>(),
    ) {
        let mut rng = SeedStream::new(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let z = Tensor::new(&[n, k], data).unwrap();
        let (loss, g) = cross_entropy(&z, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for row in g.data().chunks(k) {
            prop_assert!(row.iter().sum::<f32>().abs() <= 1e-6);
        }
    }

    #[test]
    fn kernels_keep_finite_inputs_finite(seed in any::<u64>()) {
        let mut rng = SeedStream::new(seed);
        let case = conv_case(&mut rng, seed % 2 == 0);
        let y = conv2d(&case.x, &case.w, case.b.as_ref(), case.p).unwrap();
        prop_assert!(y.all_finite());
        prop_assert!(global_avg_pool(&y).unwrap().all_finite());
    }
}

#[test]
fn relu6_examples() {
    let x = Tensor::new(&[3], vec![-1.0, 3.0, 7.0]).unwrap();
    assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0]);
}
