//! Max / average pooling and nearest-neighbour upsampling kernels.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Stride-`s` pooling geometry with padding `(k - s) / 2`, so that stride-2
/// windows of size 2, 4 and 6 all halve an even input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeom {
    pub fn new(kernel: usize, stride: usize) -> Result<Self, TensorError> {
        if kernel == 0 || stride == 0 || kernel < stride {
            return Err(TensorError::InvalidArgument {
                op: "pool2d",
                reason: format!("kernel {kernel} with stride {stride}"),
            });
        }
        Ok(PoolGeom {
            kernel,
            stride,
            padding: (kernel - stride) / 2,
        })
    }

    fn output_len(&self, input: usize) -> Result<usize, TensorError> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(TensorError::PyramidLevelTooSmall {
                size: padded,
                kernel: self.kernel,
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_shape(&self, x: Shape) -> Result<Shape, TensorError> {
        Ok(Shape::new(x.n, x.c, self.output_len(x.h)?, self.output_len(x.w)?))
    }

    /// Clipped input window `[lo, hi)` for output index `o` along one axis.
    #[inline]
    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.kernel as isize).min(len as isize)) as usize;
        (lo, hi)
    }
}

/// Pooled output plus, for max pooling, the flat input index each output was
/// taken from (first occurrence in row-major order on ties).
pub(crate) fn pool2d_forward<T: Real>(
    x: &Tensor<T>,
    kind: PoolKind,
    g: PoolGeom,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let xs = x.shape();
    let os = g.output_shape(xs)?;
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.reserve(os.numel());
    }
    let xd = x.data();
    let od = out.data_mut();
    let mut oi = 0;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * xs.h * xs.w;
            for oh in 0..os.h {
                let (h0, h1) = g.window(oh, xs.h);
                for ow in 0..os.w {
                    let (w0, w1) = g.window(ow, xs.w);
                    match kind {
                        PoolKind::Max => {
                            let mut best = base + h0 * xs.w + w0;
                            for h in h0..h1 {
                                for w in w0..w1 {
                                    let i = base + h * xs.w + w;
                                    if xd[i] > xd[best] {
                                        best = i;
                                    }
                                }
                            }
                            od[oi] = xd[best];
                            argmax.push(best);
                        }
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for h in h0..h1 {
                                for w in w0..w1 {
                                    acc += xd[base + h * xs.w + w];
                                }
                            }
                            od[oi] = acc / T::lit(((h1 - h0) * (w1 - w0)) as f64);
                        }
                    }
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub(crate) fn pool2d_backward<T: Real>(
    xs: Shape,
    kind: PoolKind,
    g: PoolGeom,
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(xs);
    let os = dy.shape();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    match kind {
        PoolKind::Max => {
            for (&src, &gv) in argmax.iter().zip(dyd) {
                dxd[src] += gv;
            }
        }
        PoolKind::Avg => {
            let mut oi = 0;
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let base = (n * xs.c + c) * xs.h * xs.w;
                    for oh in 0..os.h {
                        let (h0, h1) = g.window(oh, xs.h);
                        for ow in 0..os.w {
                            let (w0, w1) = g.window(ow, xs.w);
                            let share = dyd[oi] / T::lit(((h1 - h0) * (w1 - w0)) as f64);
                            for h in h0..h1 {
                                for w in w0..w1 {
                                    dxd[base + h * xs.w + w] += share;
                                }
                            }
                            oi += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn upsample_forward<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let xs = x.shape();
    let os = Shape::new(xs.n, xs.c, xs.h * factor, xs.w * factor);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for nc in 0..xs.n * xs.c {
        let ib = nc * xs.h * xs.w;
        let ob = nc * os.h * os.w;
        for oh in 0..os.h {
            let irow = &xd[ib + (oh / factor) * xs.w..ib + (oh / factor + 1) * xs.w];
            let orow = &mut od[ob + oh * os.w..ob + (oh + 1) * os.w];
            for (ow, o) in orow.iter_mut().enumerate() {
                *o = irow[ow / factor];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(xs: Shape, factor: usize, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(xs);
    let os = dy.shape();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for nc in 0..xs.n * xs.c {
        let ib = nc * xs.h * xs.w;
        let ob = nc * os.h * os.w;
        for oh in 0..os.h {
            for ow in 0..os.w {
                dxd[ib + (oh / factor) * xs.w + ow / factor] += dyd[ob + oh * os.w + ow];
            }
        }
    }
    dx
}
