//! Direct 2-D convolution kernels with dilation and channel groups.

use crate::error::TensorError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    /// Stride-1 geometry that preserves spatial size: `padding = d*(k-1)/2`.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Range of output columns whose input column `ow*stride + offset` lies in `[0, width)`.
#[inline]
fn valid_range(offset: isize, stride: usize, width: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last_in = width as isize - 1 - offset;
    if last_in < 0 {
        return (0, 0);
    }
    let hi = (last_in / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

pub(crate) fn check_conv<T: Real>(
    x: Shape,
    w: Shape,
    bias: Option<Shape>,
    g: ConvGeom,
) -> Result<Shape, TensorError> {
    if g.stride == 0 || g.dilation == 0 || g.groups == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            reason: format!("stride, dilation and groups must be >= 1, got {g:?}"),
        });
    }
    if w.h != w.w {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "kernel width",
            expected: w.h,
            found: w.w,
        });
    }
    if w.h % 2 == 0 {
        return Err(TensorError::EvenKernel(w.h));
    }
    if x.c % g.groups != 0 || w.n % g.groups != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "channels divisible by groups",
            expected: g.groups,
            found: x.c,
        });
    }
    if w.c != x.c / g.groups {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: w.c * g.groups,
            found: x.c,
        });
    }
    if let Some(b) = bias {
        if b.numel() != w.n {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: w.n,
                found: b.numel(),
            });
        }
    }
    let oh = g.output_len(x.h, w.h);
    let ow = g.output_len(x.w, w.w);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::new(x.n, w.n, oh, ow)),
        _ => Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "spatial extent",
            expected: g.dilation * (w.h - 1) + 1,
            found: x.h.min(x.w) + 2 * g.padding,
        }),
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape();
    let ws = w.shape();
    let os = check_conv::<T>(xs, ws, bias.map(|b| b.shape()), g)?;
    let k = ws.h;
    let cin_g = xs.c / g.groups;
    let cout_g = ws.n / g.groups;
    let mut out = Tensor::zeros(os);
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    let (ih_len, iw_len) = (xs.h, xs.w);
    let (oh_len, ow_len) = (os.h, os.w);
    for n in 0..xs.n {
        for grp in 0..g.groups {
            for ocl in 0..cout_g {
                let oc = grp * cout_g + ocl;
                let obase = (n * os.c + oc) * oh_len * ow_len;
                let oplane = &mut od[obase..obase + oh_len * ow_len];
                if let Some(b) = bias {
                    let bv = b.data()[oc];
                    oplane.iter_mut().for_each(|v| *v = bv);
                }
                for icl in 0..cin_g {
                    let ic = grp * cin_g + icl;
                    let ibase = (n * xs.c + ic) * ih_len * iw_len;
                    let iplane = &xd[ibase..ibase + ih_len * iw_len];
                    for kh in 0..k {
                        let hoff = (kh * g.dilation) as isize - g.padding as isize;
                        let (oh_lo, oh_hi) = valid_range(hoff, g.stride, ih_len, oh_len);
                        for kw in 0..k {
                            let wv = wd[((oc * cin_g + icl) * k + kh) * k + kw];
                            let woff = (kw * g.dilation) as isize - g.padding as isize;
                            let (ow_lo, ow_hi) = valid_range(woff, g.stride, iw_len, ow_len);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            for oh in oh_lo..oh_hi {
                                let ih = (oh * g.stride) as isize + hoff;
                                let irow = &iplane[ih as usize * iw_len..(ih as usize + 1) * iw_len];
                                let orow = &mut oplane[oh * ow_len..(oh + 1) * ow_len];
                                if g.stride == 1 {
                                    let start = (ow_lo as isize + woff) as usize;
                                    let src = &irow[start..start + (ow_hi - ow_lo)];
                                    for (o, &i) in orow[ow_lo..ow_hi].iter_mut().zip(src) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        let iw = ((ow * g.stride) as isize + woff) as usize;
                                        orow[ow] += wv * irow[iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution w.r.t. its input and kernel. The bias gradient
/// is the per-channel sum of `dy` and is computed by the caller.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    dy: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let xs = x.shape();
    let ws = w.shape();
    let os = dy.shape();
    let k = ws.h;
    let cin_g = xs.c / g.groups;
    let cout_g = ws.n / g.groups;
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let (ih_len, iw_len) = (xs.h, xs.w);
    let (oh_len, ow_len) = (os.h, os.w);
    for n in 0..xs.n {
        for grp in 0..g.groups {
            for ocl in 0..cout_g {
                let oc = grp * cout_g + ocl;
                let obase = (n * os.c + oc) * oh_len * ow_len;
                let gplane = &dyd[obase..obase + oh_len * ow_len];
                for icl in 0..cin_g {
                    let ic = grp * cin_g + icl;
                    let ibase = (n * xs.c + ic) * ih_len * iw_len;
                    for kh in 0..k {
                        let hoff = (kh * g.dilation) as isize - g.padding as isize;
                        let (oh_lo, oh_hi) = valid_range(hoff, g.stride, ih_len, oh_len);
                        for kw in 0..k {
                            let widx = ((oc * cin_g + icl) * k + kh) * k + kw;
                            let wv = wd[widx];
                            let woff = (kw * g.dilation) as isize - g.padding as isize;
                            let (ow_lo, ow_hi) = valid_range(woff, g.stride, iw_len, ow_len);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oh in oh_lo..oh_hi {
                                let ih = ((oh * g.stride) as isize + hoff) as usize;
                                let grow = &gplane[oh * ow_len..(oh + 1) * ow_len];
                                let row_start = ibase + ih * iw_len;
                                if g.stride == 1 {
                                    let start = (ow_lo as isize + woff) as usize;
                                    let len = ow_hi - ow_lo;
                                    if let Some(dx) = dx.as_mut() {
                                        let drow = &mut dx.data_mut()
                                            [row_start + start..row_start + start + len];
                                        for (d, &gv) in drow.iter_mut().zip(&grow[ow_lo..ow_hi]) {
                                            *d += wv * gv;
                                        }
                                    }
                                    if need_dw {
                                        let xrow = &xd[row_start + start..row_start + start + len];
                                        for (&xv, &gv) in xrow.iter().zip(&grow[ow_lo..ow_hi]) {
                                            acc += xv * gv;
                                        }
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        let iw = ((ow * g.stride) as isize + woff) as usize;
                                        if let Some(dx) = dx.as_mut() {
                                            dx.data_mut()[row_start + iw] += wv * grow[ow];
                                        }
                                        if need_dw {
                                            acc += xd[row_start + iw] * grow[ow];
                                        }
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw.data_mut()[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Shape) -> Tensor<f64> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn all_ones_3x3_center_and_corner() {
        let x = ones(Shape::new(1, 1, 3, 3));
        let w = ones(Shape::new(1, 1, 3, 3));
        let y = conv2d_forward(&x, &w, None, ConvGeom::same(3, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn dilated_all_ones_5x5() {
        let x = ones(Shape::new(1, 1, 5, 5));
        let w = ones(Shape::new(1, 1, 3, 3));
        let y = conv2d_forward(&x, &w, None, ConvGeom::same(3, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 5, 5));
        assert_eq!(y.at(0, 0, 2, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = ones(Shape::new(1, 1, 4, 4));
        let w = ones(Shape::new(1, 1, 2, 2));
        let err = conv2d_forward(&x, &w, None, ConvGeom::same(3, 1)).unwrap_err();
        assert_eq!(err, TensorError::EvenKernel(2));
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = ones(Shape::new(1, 2, 4, 4));
        let w = ones(Shape::new(1, 3, 1, 1));
        let err = conv2d_forward(&x, &w, None, ConvGeom::same(1, 1)).unwrap_err();
        assert!(matches!(
            err,
            TensorError::ShapeMismatch { dim: "input channels", .. }
        ));
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(-2, 1, 5, 5), (2, 5));
        assert_eq!(valid_range(2, 1, 5, 5), (0, 3));
        assert_eq!(valid_range(-1, 2, 6, 3), (1, 3));
        assert_eq!(valid_range(10, 1, 5, 5), (0, 0));
    }
}
