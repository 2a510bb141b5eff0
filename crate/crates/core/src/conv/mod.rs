//! Forward convolution as cross-correlation (no filter flip):
//!
//! `out[n][o][y][x] = sum_{i, ky, kx} in[n][i][y*S + ky - pad][x*S + kx - pad] * f[o][i][ky][kx]`
//!
//! with zero padding outside the image. Four routes compute it: a 64-bit
//! brute-force oracle, layout-specialised direct kernels, im2col + blocked
//! GEMM, and a frequency-domain path for stride 1.

mod direct;
mod fft;
pub(crate) mod gemm;
mod im2col;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Filter, Layout, Shape, Tensor};

pub use direct::{chwn_image_block, conv_direct};
pub use fft::conv_fft;
pub use gemm::gemm;
pub use im2col::{conv_gemm, im2col};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn new(stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be >= 1"));
        }
        Ok(ConvParams { stride, pad })
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams { stride: 1, pad: 0 }
    }
}

/// `floor((extent + 2*pad - window) / stride) + 1`, or a shape error when
/// the window does not fit inside the padded extent.
pub fn output_extent(extent: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be >= 1"));
    }
    let padded = extent + 2 * pad;
    if window == 0 || window > padded {
        return Err(Error::shape(format!(
            "window {window} does not fit extent {extent} with pad {pad}"
        )));
    }
    Ok((padded - window) / stride + 1)
}

/// Output shape `(N, C_o, H_out, W_out)`; checks channel agreement.
pub fn conv_output_shape(input: Shape, f_c_i: usize, c_o: usize, f_h: usize, f_w: usize, p: ConvParams) -> Result<Shape> {
    if input.c() != f_c_i {
        return Err(Error::shape(format!(
            "input has {} channels, filter expects {f_c_i}",
            input.c()
        )));
    }
    let ho = output_extent(input.h(), f_h, p.stride, p.pad)?;
    let wo = output_extent(input.w(), f_w, p.stride, p.pad)?;
    Shape::new(input.n(), c_o, ho, wo)
}

pub(crate) fn check_shapes<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Shape> {
    if p.stride == 0 {
        return Err(Error::shape("stride must be >= 1"));
    }
    conv_output_shape(input.shape(), f.c_i(), f.c_o(), f.f_h(), f.f_w(), p)
}

/// Range of filter taps `k` with `0 <= o*stride + k - pad < extent`.
#[inline]
pub(crate) fn valid_taps(o: usize, stride: usize, pad: usize, window: usize, extent: usize) -> (usize, usize) {
    let origin = o * stride;
    let lo = pad.saturating_sub(origin);
    let hi = window.min((extent + pad).saturating_sub(origin));
    (lo, hi.max(lo))
}

/// Ground truth: the quadruple sum accumulated in `f64`, rounded once.
/// Accepts any input layout; the result is NCHW.
pub fn conv_oracle<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    let out_shape = check_shapes(input, f, p)?;
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let (h, w) = (input.shape().h(), input.shape().w());
    let c_o = f.c_o();
    let mut out = vec![T::zero(); out_shape.len()];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(slab, plane)| {
        let (n, o) = (slab / c_o, slab % c_o);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f64;
                for i in 0..f.c_i() {
                    for ky in 0..f.f_h() {
                        let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..f.f_w() {
                            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += input.get(n, i, iy as usize, ix as usize).as_f64()
                                * f.get(o, i, ky, kx).as_f64();
                        }
                    }
                }
                plane[oy * wo + ox] = T::from_f64_lossy(acc);
            }
        }
    });
    Tensor::new(out_shape, Layout::Nchw, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvAlgorithm {
    Oracle,
    Direct,
    Gemm,
    Fft,
}

impl ConvAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            ConvAlgorithm::Oracle => "oracle",
            ConvAlgorithm::Direct => "direct",
            ConvAlgorithm::Gemm => "gemm",
            ConvAlgorithm::Fft => "fft",
        }
    }

    /// Documented tolerance against the oracle.
    pub fn tolerance(self) -> f64 {
        match self {
            ConvAlgorithm::Oracle => 0.0,
            ConvAlgorithm::Direct | ConvAlgorithm::Gemm => 1e-5,
            ConvAlgorithm::Fft => 1e-3,
        }
    }
}

impl fmt::Display for ConvAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConvAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(ConvAlgorithm::Oracle),
            "direct" => Ok(ConvAlgorithm::Direct),
            "gemm" | "mm" => Ok(ConvAlgorithm::Gemm),
            "fft" => Ok(ConvAlgorithm::Fft),
            _ => Err(Error::Unsupported(format!("unknown convolution algorithm '{s}'"))),
        }
    }
}

/// Runs `alg` on `input`. Direct keeps the input layout; the other routes
/// require NCHW and return NCHW.
pub fn conv_forward<T: Real>(
    alg: ConvAlgorithm,
    input: &Tensor<T>,
    f: &Filter<T>,
    p: ConvParams,
) -> Result<Tensor<T>> {
    match alg {
        ConvAlgorithm::Oracle => conv_oracle(input, f, p),
        ConvAlgorithm::Direct => conv_direct(input, f, p),
        ConvAlgorithm::Gemm => conv_gemm(input, f, p),
        ConvAlgorithm::Fft => conv_fft(input, f, p),
    }
}
