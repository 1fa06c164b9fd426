//! im2col convolution kernels. 1D inputs `[C, L]` run as 2D with `H = 1`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Geometry for `input` `[C, L]`/`[C, H, W]` and `weight` `[Co, C, k]`/`[Co, C, kh, kw]`.
    pub fn infer(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        let (c_in, h, w, ci_w, c_out, kh, kw, sh, ph) = match (input, weight) {
            ([c, l], [co, ci, k]) => (*c, 1, *l, *ci, *co, 1, *k, 1, 0),
            ([c, h, w], [co, ci, kh, kw]) => (*c, *h, *w, *ci, *co, *kh, *kw, stride, pad),
            _ => return Err(Error::shape("conv", input, weight)),
        };
        if c_in != ci_w || kh == 0 || kw == 0 {
            return Err(Error::shape("conv", input, weight));
        }
        let (sw, pw) = (stride, pad);
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape("conv", input, weight));
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        Ok(ConvGeom {
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh,
            ow,
        })
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

/// Unfold `x` `[c_in, h, w]` into `[c_in*kh*kw, oh*ow]`.
pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Vec<S> {
    if g.is_pointwise() {
        return x.to_vec();
    }
    let p = g.out_pixels();
    let mut cols = vec![S::zero(); g.patch() * p];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    let drow = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && jj < g.w as isize {
                            *d = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back to `[c_in, h, w]`.
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom) -> Vec<S> {
    if g.is_pointwise() {
        return cols.to_vec();
    }
    let p = g.out_pixels();
    let mut x = vec![S::zero(); g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + ii as usize) * g.w..][..g.w];
                    let srow = &src[oi * g.ow..(oi + 1) * g.ow];
                    for (oj, &s) in srow.iter().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] = dst[jj as usize] + s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns `(output [c_out, oh*ow], cols)`.
pub fn forward<S: Scalar>(x: &[S], weight: &[S], bias: Option<&[S]>, g: &ConvGeom) -> (Vec<S>, Vec<S>) {
    let cols = im2col(x, g);
    let p = g.out_pixels();
    let mut out = vec![S::zero(); g.c_out * p];
    if let Some(b) = bias {
        for (c, &bc) in b.iter().enumerate() {
            out[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = bc);
        }
    }
    S::gemm(g.c_out, g.patch(), p, weight, false, &cols, false, &mut out, bias.is_some());
    (out, cols)
}

pub fn weight_grad<S: Scalar>(dout: &[S], cols: &[S], g: &ConvGeom) -> Vec<S> {
    let mut dw = vec![S::zero(); g.c_out * g.patch()];
    S::gemm(g.c_out, g.out_pixels(), g.patch(), dout, false, cols, true, &mut dw, false);
    dw
}

pub fn bias_grad<S: Scalar>(dout: &[S], g: &ConvGeom) -> Vec<S> {
    let p = g.out_pixels();
    (0..g.c_out).map(|c| dout[c * p..(c + 1) * p].iter().copied().sum()).collect()
}

pub fn input_grad<S: Scalar>(dout: &[S], weight: &[S], g: &ConvGeom) -> Vec<S> {
    let mut dcols = vec![S::zero(); g.patch() * g.out_pixels()];
    S::gemm(g.patch(), g.c_out, g.out_pixels(), weight, true, dout, false, &mut dcols, false);
    col2im(&dcols, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.oh * g.ow];
        for co in 0..g.c_out {
            for oi in 0..g.oh {
                for oj in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                                let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                                if ii < 0 || jj < 0 || ii >= g.h as isize || jj >= g.w as isize {
                                    continue;
                                }
                                acc += w[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj]
                                    * x[(ci * g.h + ii as usize) * g.w + jj as usize];
                            }
                        }
                    }
                    out[(co * g.oh + oi) * g.ow + oj] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let g = ConvGeom::infer(&[2, 5, 6], &[3, 2, 3, 3], 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (3, 3));
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..54).map(|i| ((i * 5) % 9) as f64 * 0.1 - 0.4).collect();
        let (out, _) = forward(&x, &w, None, &g);
        let want = direct(&x, &w, &g);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::infer(&[2, 4, 5], &[1, 2, 3, 3], 1, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let c: Vec<f64> = (0..g.patch() * g.out_pixels()).map(|i| (i as f64 * 0.17).cos()).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&c, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_geometry() {
        let g = ConvGeom::infer(&[1, 4], &[1, 1, 3], 2, 1).unwrap();
        assert_eq!((g.h, g.w, g.oh, g.ow), (1, 4, 1, 2));
        assert!(ConvGeom::infer(&[2, 4], &[1, 1, 3], 1, 1).is_err());
    }
}
