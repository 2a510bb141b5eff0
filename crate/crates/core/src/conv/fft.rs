//! Frequency-domain convolution over a 2D row-column radix-2 FFT.

use num_complex::Complex;
use rayon::prelude::*;

use super::im2col::require_nchw;
use super::{check_shapes, ConvParams};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Filter, Layout, Tensor};

/// In-place iterative radix-2 transform of one power-of-two length.
#[derive(Debug, Clone)]
pub(crate) struct Radix2<T> {
    len: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Real> Radix2<T> {
    pub(crate) fn new(len: usize) -> Self {
        assert!(len.is_power_of_two());
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // computed in f64, rounded once
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                Complex::new(T::from_f64_lossy(angle.cos()), T::from_f64_lossy(angle.sin()))
            })
            .collect();
        Radix2 { len, twiddles, bitrev }
    }

    /// Unnormalised transform; `inverse` conjugates the twiddles.
    pub(crate) fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        debug_assert_eq!(buf.len(), self.len);
        for i in 0..self.len {
            let j = self.bitrev[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.len {
            let step = self.len / (2 * half);
            for start in (0..self.len).step_by(2 * half) {
                for k in 0..half {
                    let mut tw = self.twiddles[k * step];
                    if inverse {
                        tw = tw.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * tw;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

/// Row-column 2D transform over a `rows x cols` row-major buffer.
#[derive(Debug, Clone)]
pub(crate) struct Fft2d<T> {
    rows: usize,
    cols: usize,
    row_fft: Radix2<T>,
    col_fft: Radix2<T>,
}

impl<T: Real> Fft2d<T> {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        Fft2d {
            rows,
            cols,
            row_fft: Radix2::new(cols),
            col_fft: Radix2::new(rows),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Forward (or normalised inverse) transform in place; `column` is scratch of length `rows`.
    pub(crate) fn process(&self, buf: &mut [Complex<T>], column: &mut Vec<Complex<T>>, inverse: bool) {
        for row in buf.chunks_exact_mut(self.cols) {
            self.row_fft.process(row, inverse);
        }
        column.resize(self.rows, Complex::new(T::zero(), T::zero()));
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            self.col_fft.process(column, inverse);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
        if inverse {
            let scale = T::one() / T::from_usize(self.len()).unwrap();
            for v in buf.iter_mut() {
                *v = *v * scale;
            }
        }
    }
}

/// Stride-1 convolution in the frequency domain. Each input channel is
/// zero-padded into an `L_h x L_w` grid (next powers of two covering the
/// padded image); filters are flipped in both axes so the circular product
/// reproduces cross-correlation, and the valid window is cropped out after
/// one inverse transform per `(n, c_o)`.
pub fn conv_fft<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    require_nchw(input)?;
    let out_shape = check_shapes(input, f, p)?;
    if p.stride != 1 {
        return Err(Error::Unsupported(format!(
            "stride unsupported: frequency-domain convolution needs stride 1, got {}",
            p.stride
        )));
    }
    let s = input.shape();
    let (n_img, c_i, h, w) = (s.n(), s.c(), s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let (fh, fw) = (f.f_h(), f.f_w());
    let lh = (h + 2 * p.pad).next_power_of_two();
    let lw = (w + 2 * p.pad).next_power_of_two();
    let plan = Fft2d::<T>::new(lh, lw);
    let grid = plan.len();
    let zero = Complex::new(T::zero(), T::zero());

    // spectra of every padded input channel, [n][c_i][grid]
    let mut spectra = vec![zero; n_img * c_i * grid];
    let src = input.data();
    spectra.par_chunks_mut(grid).enumerate().for_each_init(Vec::new, |column, (idx, buf)| {
        let chan = &src[idx * h * w..(idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                buf[(y + p.pad) * lw + x + p.pad] = Complex::new(chan[y * w + x], T::zero());
            }
        }
        plan.process(buf, column, false);
    });

    let per_out = ho * wo;
    let per_channel: Vec<Vec<T>> = (0..f.c_o())
        .into_par_iter()
        .map(|o| {
            let mut column = Vec::new();
            // flipped filter spectra for this output channel
            let mut kernels = vec![zero; c_i * grid];
            for (i, buf) in kernels.chunks_exact_mut(grid).enumerate() {
                for ky in 0..fh {
                    for kx in 0..fw {
                        buf[(fh - 1 - ky) * lw + (fw - 1 - kx)] = Complex::new(f.get(o, i, ky, kx), T::zero());
                    }
                }
                plan.process(buf, &mut column, false);
            }
            let mut result = vec![T::zero(); n_img * per_out];
            let mut acc = vec![zero; grid];
            for n in 0..n_img {
                acc.fill(zero);
                for i in 0..c_i {
                    let x = &spectra[(n * c_i + i) * grid..(n * c_i + i + 1) * grid];
                    let k = &kernels[i * grid..(i + 1) * grid];
                    for ((a, &xv), &kv) in acc.iter_mut().zip(x).zip(k) {
                        *a = *a + xv * kv;
                    }
                }
                plan.process(&mut acc, &mut column, true);
                let dst = &mut result[n * per_out..(n + 1) * per_out];
                for oy in 0..ho {
                    for ox in 0..wo {
                        dst[oy * wo + ox] = acc[(oy + fh - 1) * lw + ox + fw - 1].re;
                    }
                }
            }
            result
        })
        .collect();

    let c_o = f.c_o();
    let mut out = vec![T::zero(); out_shape.len()];
    for (o, chan) in per_channel.iter().enumerate() {
        for n in 0..n_img {
            out[(n * c_o + o) * per_out..(n * c_o + o + 1) * per_out]
                .copy_from_slice(&chan[n * per_out..(n + 1) * per_out]);
        }
    }
    Tensor::new(out_shape, Layout::Nchw, out)
}
