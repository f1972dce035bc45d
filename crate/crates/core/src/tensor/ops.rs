use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// Per-channel inference-mode batch-norm parameters.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub eps: f32,
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel of an N×C×H×W input.
pub fn batchnorm_infer(x: &Tensor, bn: BatchNormParams<'_>) -> Result<Tensor> {
    let mut out = x.clone();
    batchnorm_infer_in_place(&mut out, bn)?;
    Ok(out)
}

pub(crate) fn batchnorm_infer_in_place(x: &mut Tensor, bn: BatchNormParams<'_>) -> Result<()> {
    x.expect_rank(4, "batchnorm input")?;
    let (n, c) = (x.dims()[0], x.dims()[1]);
    let plane = x.dims()[2] * x.dims()[3];
    for (name, t) in [
        ("gamma", bn.gamma),
        ("beta", bn.beta),
        ("running_mean", bn.running_mean),
        ("running_var", bn.running_var),
    ] {
        if t.dims() != [c] {
            return Err(Error::Shape(format!(
                "batchnorm {name}: expected [{c}], got {:?}",
                t.dims()
            )));
        }
    }
    if bn.eps.is_nan() || bn.eps < 0.0 {
        return Err(Error::Argument(format!("batchnorm eps {} < 0", bn.eps)));
    }
    let mut denom = Vec::with_capacity(c);
    for (ch, &var) in bn.running_var.data().iter().enumerate() {
        if var.is_nan() || var < 0.0 {
            return Err(Error::Argument(format!(
                "batchnorm running_var[{ch}] = {var} is negative"
            )));
        }
        let d = libm::sqrtf(var + bn.eps);
        if d == 0.0 {
            return Err(Error::Argument(format!(
                "batchnorm channel {ch}: var + eps is zero"
            )));
        }
        denom.push(d);
    }
    let (gamma, beta, mean) = (bn.gamma.data(), bn.beta.data(), bn.running_mean.data());
    for (i, chunk) in x.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = i % c;
        let (g, b, m, d) = (gamma[ch], beta[ch], mean[ch], denom[ch]);
        for v in chunk {
            *v = g * ((*v - m) / d) + b;
        }
    }
    debug_assert_eq!(n * c * plane, x.len());
    Ok(())
}

/// Clipped rectifier `min(max(x, 0), 6)`.
pub fn relu6(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    relu6_in_place(&mut out);
    out
}

pub(crate) fn relu6_in_place(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 6.0);
    }
}

/// Elementwise sum of two equally shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "add: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.dims(), data)
}

/// Mean over H×W for each (n, c); N×C×H×W → N×C.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "global_avg_pool input")?;
    let d = x.dims();
    let plane = d[2] * d[3];
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|chunk| chunk.iter().fold(0.0f32, |acc, v| acc + v) / plane as f32)
        .collect();
    Tensor::new(&[d[0], d[1]], data)
}

/// `x · Wᵀ + b` for x: N×F, W: K×F, b: K.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "linear input")?;
    weight.expect_rank(2, "linear weight")?;
    let (n, f) = (x.dims()[0], x.dims()[1]);
    let (k, wf) = (weight.dims()[0], weight.dims()[1]);
    if wf != f {
        return Err(Error::Shape(format!(
            "linear: input has {f} features, weight expects {wf}"
        )));
    }
    if bias.dims() != [k] {
        return Err(Error::Shape(format!(
            "linear bias: expected [{k}], got {:?}",
            bias.dims()
        )));
    }
    let mut out = vec![0.0f32; n * k];
    for (row, dst) in x.data().chunks_exact(f).zip(out.chunks_exact_mut(k)) {
        for ((d, wrow), b) in dst
            .iter_mut()
            .zip(weight.data().chunks_exact(f))
            .zip(bias.data())
        {
            let acc = row.iter().zip(wrow).fold(0.0f32, |acc, (a, w)| acc + a * w);
            *d = acc + b;
        }
    }
    Tensor::new(&[n, k], out)
}

/// Row-wise softmax of N×K logits, stabilized by subtracting the row max.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(2, "softmax input")?;
    let k = logits.dims()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        softmax_row(row);
    }
    Tensor::new(logits.dims(), out)
}

fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax(z) - onehot) / N`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    logits.expect_rank(2, "cross_entropy logits")?;
    let (n, k) = (logits.dims()[0], logits.dims()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "cross_entropy: {} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Index(format!(
            "label {l} at row {i} out of range for {k} classes"
        )));
    }
    let mut grad = logits.data().to_vec();
    let mut total = 0.0f32;
    for ((row, z), &label) in grad
        .chunks_exact_mut(k)
        .zip(logits.data().chunks_exact(k))
        .zip(labels)
    {
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum_exp = z.iter().fold(0.0f32, |acc, &v| acc + libm::expf(v - max));
        total += libm::logf(sum_exp) - (z[label] - max);
        softmax_row(row);
        row[label] -= 1.0;
        for g in row.iter_mut() {
            *g /= n as f32;
        }
    }
    Ok((total / n as f32, Tensor::new(&[n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn batchnorm_identity_and_affine() {
        let x = t(&[1, 1, 1, 3], &[-2.0, 0.5, 7.0]);
        let one = t(&[1], &[1.0]);
        let zero = t(&[1], &[0.0]);
        let bn = BatchNormParams {
            gamma: &one,
            beta: &zero,
            running_mean: &zero,
            running_var: &one,
            eps: 0.0,
        };
        assert_eq!(batchnorm_infer(&x, bn).unwrap(), x);

        let x = t(&[1, 1, 1, 1], &[3.0]);
        let (g, b, m, v) = (
            t(&[1], &[2.0]),
            t(&[1], &[1.0]),
            t(&[1], &[1.0]),
            t(&[1], &[4.0]),
        );
        let bn = BatchNormParams {
            gamma: &g,
            beta: &b,
            running_mean: &m,
            running_var: &v,
            eps: 0.0,
        };
        assert_eq!(batchnorm_infer(&x, bn).unwrap().data(), &[3.0]);
    }

    #[test]
    fn batchnorm_length_mismatch() {
        let x = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        let one = t(&[1], &[1.0]);
        let two = t(&[2], &[1.0, 1.0]);
        let bn = BatchNormParams {
            gamma: &two,
            beta: &two,
            running_mean: &one,
            running_var: &two,
            eps: 1e-5,
        };
        assert!(matches!(batchnorm_infer(&x, bn), Err(Error::Shape(_))));
    }

    #[test]
    fn relu6_clamps() {
        let y = relu6(&t(&[3], &[-1.0, 3.0, 7.0]));
        assert_eq!(y.data(), &[0.0, 3.0, 6.0]);
    }

    #[test]
    fn pool_means() {
        let y = global_avg_pool(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let c = Tensor::full(&[2, 3, 5, 5], 1.75).unwrap();
        assert!(global_avg_pool(&c)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.75));
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let x = t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero = t(&[2], &[0.0, 0.0]);
        assert_eq!(linear(&x, &eye, &zero).unwrap(), x);
        let w0 = Tensor::zeros(&[3, 2]).unwrap();
        let b0 = t(&[3], &[0.1, 0.2, 0.3]);
        let y = linear(&x, &w0, &b0).unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
        assert!(linear(&x, &t(&[1, 3], &[0.0; 3]), &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let z = [1.0f32.ln(), 2.0f32.ln(), 3.0f32.ln()];
        let y = softmax(&t(&[1, 3], &z)).unwrap();
        for (v, want) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy(&t(&[1, 3], &[0.0, 0.0, 0.0]), &[1]).unwrap();
        assert!((loss - 3.0f32.ln()).abs() < 1e-6, "{loss}");
        assert!((grad.data()[1] + 2.0 / 3.0).abs() < 1e-6);

        let (loss, _) = cross_entropy(&t(&[1, 3], &[50.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(loss < 1e-6);

        assert!(matches!(
            cross_entropy(&t(&[1, 3], &[0.0; 3]), &[3]),
            Err(Error::Index(_))
        ));
    }
}
