use crate::error::{Result, TensorError};
use crate::ops::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[C,H,W]` into `[C·kh·kw, OH·OW]` columns.
    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let npix = self.out_pixels();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * npix..][..npix];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if x < 0 || x >= self.w as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let npix = self.out_pixels();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * npix..][..npix];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] = dst[x as usize] + row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// 2-D cross-correlation of `[B,C,H,W]` input with a `[F,C,kh,kw]` kernel
    /// under zero padding.
    pub fn conv2d(&self, kernel: &Self, stride: usize, padding: usize) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: self.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        };
        let (&[b, c, h, w], &[f, kc, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(mismatch());
        };
        if kc != c || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                reason: "stride must be at least 1".into(),
            });
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let (patch, npix) = (geom.patch(), geom.out_pixels());
        let in_len = c * h * w;

        let mut out = vec![T::zero(); b * f * npix];
        let mut cols = vec![T::zero(); patch * npix];
        for n in 0..b {
            geom.im2col(&self.data()[n * in_len..(n + 1) * in_len], &mut cols);
            gemm_nn(f, patch, npix, kernel.data(), &cols, &mut out[n * f * npix..(n + 1) * f * npix], T::zero());
        }

        let (x, k) = (self.data_arc(), kernel.data_arc());
        Ok(Tensor::from_op(vec![b, f, geom.oh, geom.ow], out, &[self, kernel], move |g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * in_len]);
            let mut gk = needs[1].then(|| vec![T::zero(); f * patch]);
            let mut cols = vec![T::zero(); patch * npix];
            for n in 0..b {
                let gout = &g[n * f * npix..(n + 1) * f * npix];
                if let Some(gk) = gk.as_mut() {
                    geom.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
                    gemm_nt(f, npix, patch, gout, &cols, gk, T::one());
                }
                if let Some(gx) = gx.as_mut() {
                    gemm_tn(patch, f, npix, &k, gout, &mut cols, T::zero());
                    geom.col2im(&cols, &mut gx[n * in_len..(n + 1) * in_len]);
                }
            }
            vec![gx, gk]
        }))
    }

    /// Adds `bias[C]` to every pixel of channel `C` in a `[B,C,H,W]` tensor.
    pub fn add_channel_bias(&self, bias: &Self) -> Result<Self> {
        let (&[_, c, h, w], &[bc]) = (self.shape(), bias.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        };
        if bc != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let hw = h * w;
        let mut out = self.to_vec();
        for (idx, chunk) in out.chunks_mut(hw).enumerate() {
            let v = bias.data()[idx % c];
            chunk.iter_mut().for_each(|x| *x = *x + v);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self, bias], move |g, needs| {
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); c];
                for (idx, chunk) in g.chunks(hw).enumerate() {
                    gb[idx % c] = gb[idx % c] + chunk.iter().copied().sum();
                }
                gb
            });
            vec![needs[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Nearest-neighbour 2× upsampling of a `[B,C,H,W]` tensor.
    pub fn upsample_nearest2(&self) -> Result<Self> {
        let &[b, c, h, w] = self.shape() else {
            return Err(TensorError::Invalid {
                op: "upsample_nearest2",
                reason: format!("expected rank 4, got {:?}", self.shape()),
            });
        };
        let (oh, ow) = (2 * h, 2 * w);
        let planes = b * c;
        let x = self.data();
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(p * oh + y) * ow + xx] = x[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(Tensor::from_op(vec![b, c, oh, ow], out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); planes * h * w];
            for p in 0..planes {
                for y in 0..oh {
                    for xx in 0..ow {
                        let i = (p * h + y / 2) * w + xx / 2;
                        gx[i] = gx[i] + g[(p * oh + y) * ow + xx];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
