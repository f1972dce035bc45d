use alloc::format;
use alloc::vec;

use super::Tensor;
use crate::{Error, Result};

/// Stride, zero padding and group count of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Grouped 2-D cross-correlation with zero padding.
///
/// `input` is N×C×H×W and `weight` is O×(C/g)×Kh×Kw. Each output element is
/// accumulated in `f32` over (input channel, Kh, Kw) in ascending order with
/// Kw innermost, starting from zero; the bias is added last. Taps that land in
/// the padding contribute nothing.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    params: ConvParams,
) -> Result<Tensor> {
    input.expect_rank(4, "conv2d input")?;
    weight.expect_rank(4, "conv2d weight")?;
    let [n, c, h, w] = dims4(input);
    let [o, cg, kh, kw] = dims4(weight);
    let ConvParams {
        stride,
        padding,
        groups,
    } = params;

    if stride == 0 {
        return Err(Error::Argument("conv2d stride must be positive".into()));
    }
    if groups == 0 {
        return Err(Error::Argument("conv2d groups must be positive".into()));
    }
    if c % groups != 0 {
        return Err(Error::Shape(format!(
            "conv2d channel axis: {c} input channels not divisible by {groups} groups"
        )));
    }
    if o % groups != 0 {
        return Err(Error::Shape(format!(
            "conv2d output-channel axis: {o} filters not divisible by {groups} groups"
        )));
    }
    if cg != c / groups {
        return Err(Error::Shape(format!(
            "conv2d weight input-channel axis: expected {} per group, got {cg}",
            c / groups
        )));
    }
    if h + 2 * padding < kh {
        return Err(Error::Shape(format!(
            "conv2d height axis: padded height {} smaller than kernel {kh}",
            h + 2 * padding
        )));
    }
    if w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "conv2d width axis: padded width {} smaller than kernel {kw}",
            w + 2 * padding
        )));
    }
    if let Some(b) = bias {
        if b.dims() != [o] {
            return Err(Error::Shape(format!(
                "conv2d bias: expected [{o}], got {:?}",
                b.dims()
            )));
        }
    }

    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let out_per_group = o / groups;
    let in_plane = h * w;
    let out_plane = oh * ow;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; n * o * out_plane];

    // Output columns whose tap `kx` lands inside the input row.
    let col_ranges: alloc::vec::Vec<(usize, usize)> = (0..kw)
        .map(|kx| valid_range(kx, padding, stride, w, ow))
        .collect();

    for b in 0..n {
        for oc in 0..o {
            let group = oc / out_per_group;
            let dst = &mut out[(b * o + oc) * out_plane..(b * o + oc + 1) * out_plane];
            for ci in 0..cg {
                let src_c = group * cg + ci;
                let src = &x[(b * c + src_c) * in_plane..(b * c + src_c + 1) * in_plane];
                let wbase = (oc * cg + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[wbase + ky * kw + kx];
                        let (ox_lo, ox_hi) = col_ranges[kx];
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy * stride + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let row = &src[(iy - padding) * w..(iy - padding + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - padding;
                                let len = ox_hi - ox_lo;
                                for (d, s) in
                                    drow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + len])
                                {
                                    *d += wv * *s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    drow[ox] += wv * row[ox * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bv = bias.data()[oc];
                for d in dst.iter_mut() {
                    *d += bv;
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out)
}

/// Half-open range of output positions `p` with `p*stride + k - pad` in `[0, len)`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // p*stride + k <= len - 1 + pad
    let hi = if len + pad < k + 1 {
        0
    } else {
        (len - 1 + pad - k) / stride + 1
    };
    (lo.min(out_len), hi.min(out_len))
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let d = t.dims();
    [d[0], d[1], d[2], d[3]]
}
