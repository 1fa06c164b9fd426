//! Orthonormal discrete Fourier transforms on planar complex tensors.
//!
//! All transforms carry a `1/sqrt(n)` factor in both directions, so the forward
//! transform is unitary and its adjoint is the inverse transform.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_ndim(op: &'static str, dims: &[usize], ndim: usize) -> Result<()> {
    if ndim == 0 || ndim > dims.len() {
        return Err(Error::invalid(format!(
            "{op}: cannot transform {ndim} trailing axes of shape {dims:?}"
        )));
    }
    Ok(())
}

fn fft_axis<S: Scalar>(buf: &mut [Complex<S>], dims: &[usize], axis: usize, inverse: bool) {
    let len = dims[axis];
    if len <= 1 {
        return;
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    if inner == 1 {
        S::fft_lines(buf, len, inverse);
        return;
    }
    let mut scratch = vec![Complex::new(S::zero(), S::zero()); buf.len()];
    for o in 0..outer {
        for i in 0..inner {
            let line = (o * inner + i) * len;
            for j in 0..len {
                scratch[line + j] = buf[(o * len + j) * inner + i];
            }
        }
    }
    S::fft_lines(&mut scratch, len, inverse);
    for o in 0..outer {
        for i in 0..inner {
            let line = (o * inner + i) * len;
            for j in 0..len {
                buf[(o * len + j) * inner + i] = scratch[line + j];
            }
        }
    }
}

fn transform<S: Scalar>(buf: &mut [Complex<S>], dims: &[usize], ndim: usize, inverse: bool) {
    let first = dims.len() - ndim;
    let mut count = 1usize;
    for axis in first..dims.len() {
        fft_axis(buf, dims, axis, inverse);
        count *= dims[axis];
    }
    let scale = S::lit(1.0 / (count as f64).sqrt());
    for v in buf.iter_mut() {
        *v = *v * scale;
    }
}

fn to_complex<S: Scalar>(planar: &[S]) -> Vec<Complex<S>> {
    let n = planar.len() / 2;
    (0..n).map(|i| Complex::new(planar[i], planar[n + i])).collect()
}

fn to_planar<S: Scalar>(buf: &[Complex<S>]) -> Vec<S> {
    let mut out = Vec::with_capacity(buf.len() * 2);
    out.extend(buf.iter().map(|c| c.re));
    out.extend(buf.iter().map(|c| c.im));
    out
}

/// Logical complex shape of a planar tensor, i.e. `shape[1..]`.
pub fn complex_dims<'a>(op: &'static str, shape: &'a [usize]) -> Result<&'a [usize]> {
    match shape.first() {
        Some(2) => Ok(&shape[1..]),
        _ => Err(Error::invalid(format!(
            "{op}: expected planar complex tensor [2, ..], got {shape:?}"
        ))),
    }
}

/// Complex-to-complex transform over the trailing `ndim` logical axes.
pub fn fft<S: Scalar>(x: &Tensor<S>, ndim: usize, inverse: bool) -> Result<Tensor<S>> {
    let dims = complex_dims("fft", x.shape())?;
    check_ndim("fft", dims, ndim)?;
    let mut buf = to_complex(x.data());
    transform(&mut buf, dims, ndim, inverse);
    Tensor::new(x.shape(), to_planar(&buf))
}

/// Real input, full (two-sided) complex spectrum `[2, ..shape]`.
pub fn rfft<S: Scalar>(x: &Tensor<S>, ndim: usize) -> Result<Tensor<S>> {
    check_ndim("rfft", x.shape(), ndim)?;
    let mut buf: Vec<Complex<S>> = x.data().iter().map(|&v| Complex::new(v, S::zero())).collect();
    transform(&mut buf, x.shape(), ndim, false);
    let mut shape = vec![2];
    shape.extend_from_slice(x.shape());
    Tensor::new(&shape, to_planar(&buf))
}

/// Real part of the inverse transform. This is the adjoint of [`rfft`] and
/// inverts it on spectra of real signals.
pub fn irfft<S: Scalar>(z: &Tensor<S>, ndim: usize) -> Result<Tensor<S>> {
    let dims = complex_dims("irfft", z.shape())?.to_vec();
    check_ndim("irfft", &dims, ndim)?;
    let mut buf = to_complex(z.data());
    transform(&mut buf, &dims, ndim, true);
    Tensor::new(&dims, buf.iter().map(|c| c.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &v) in x.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                let s = 1.0 / (n as f64).sqrt();
                (re * s, im * s)
            })
            .collect()
    }

    #[test]
    fn rfft_matches_naive_dft() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::randn(&[12], &mut rng);
        let z = rfft(&x, 1).unwrap();
        let want = naive_dft(x.data());
        for (k, (re, im)) in want.into_iter().enumerate() {
            assert!((z.data()[k] - re).abs() < 1e-12);
            assert!((z.data()[12 + k] - im).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_transform_is_separable() {
        let mut rng = Rng::new(9);
        let x = Tensor::<f64>::randn(&[1, 4, 6], &mut rng);
        let z = rfft(&x, 2).unwrap();
        // row-then-column by hand from the 1D transform
        let mut rows = Vec::new();
        for r in 0..4 {
            let row = Tensor::<f64>::new(&[6], x.data()[r * 6..(r + 1) * 6].to_vec()).unwrap();
            rows.push(rfft(&row, 1).unwrap());
        }
        let mut re = vec![0.0; 24];
        let mut im = vec![0.0; 24];
        for c in 0..6 {
            let col: Vec<Complex<f64>> = (0..4)
                .map(|r| Complex::new(rows[r].data()[c], rows[r].data()[6 + c]))
                .collect();
            let mut buf = col.clone();
            f64::fft_lines(&mut buf, 4, false);
            for r in 0..4 {
                re[r * 6 + c] = buf[r].re / 2.0;
                im[r * 6 + c] = buf[r].im / 2.0;
            }
        }
        for i in 0..24 {
            assert!((z.data()[i] - re[i]).abs() < 1e-12);
            assert!((z.data()[24 + i] - im[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_parseval_length_128() {
        let mut rng = Rng::new(11);
        let x = Tensor::<f64>::randn(&[128], &mut rng);
        let z = rfft(&x, 1).unwrap();
        let back = irfft(&z, 1).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rel = (x.norm_sq() - z.norm_sq()).abs() / x.norm_sq();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn complex_inverse_undoes_forward() {
        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::randn(&[2, 8, 4], &mut rng);
        let y = fft(&fft(&x, 2, false).unwrap(), 2, true).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_planar_input() {
        let x = Tensor::<f64>::zeros(&[3, 4]);
        assert!(fft(&x, 1, false).is_err());
        assert!(irfft(&x, 1).is_err());
    }
}
