//! Direct convolution specialised per layout.

use num_traits::Zero;
use rayon::prelude::*;

use super::{check_shapes, valid_taps, ConvParams};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Filter, Layout, Tensor};

/// Images sharing one accumulator lane group.
const LANES: usize = 8;
const MAX_BLOCK: usize = LANES * 4;

/// Images per accumulator block for the CHWN kernel: four lane groups at
/// `N >= 128`, two at `N >= 64`, one below that (clamped to `N`).
pub fn chwn_image_block(n: usize) -> usize {
    let groups = if n >= 128 {
        4
    } else if n >= 64 {
        2
    } else {
        1
    };
    (LANES * groups).min(n)
}

pub fn conv_direct<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    match input.layout() {
        Layout::Chwn => direct_chwn(input, f, p),
        Layout::Nchw => direct_nchw(input, f, p),
        other => Err(Error::Layout(format!("direct convolution has no {other} kernel"))),
    }
}

/// Innermost loop runs over a block of images at unit stride; the block's
/// partial sums stay in a local array for the whole filter window.
fn direct_chwn<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    let out_shape = check_shapes(input, f, p)?;
    let s = input.shape();
    let (n, h, w) = (s.n(), s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let (fh, fw) = (f.f_h(), f.f_w());
    let block = chwn_image_block(n);
    let src = input.data();
    let weights = f.data();
    let row = w * n;
    let plane = h * row;

    let mut out = vec![T::zero(); out_shape.len()];
    out.par_chunks_mut(ho * wo * n).enumerate().for_each(|(o, out_plane)| {
        let w_o = &weights[o * f.patch_len()..(o + 1) * f.patch_len()];
        for oy in 0..ho {
            let (ky0, ky1) = valid_taps(oy, p.stride, p.pad, fh, h);
            for ox in 0..wo {
                let (kx0, kx1) = valid_taps(ox, p.stride, p.pad, fw, w);
                let out_px = &mut out_plane[(oy * wo + ox) * n..(oy * wo + ox + 1) * n];
                for nb in (0..n).step_by(block) {
                    let len = block.min(n - nb);
                    let mut acc = [T::Acc::zero(); MAX_BLOCK];
                    let acc = &mut acc[..len];
                    for i in 0..f.c_i() {
                        for ky in ky0..ky1 {
                            let iy = oy * p.stride + ky - p.pad;
                            let w_row = &w_o[(i * fh + ky) * fw..(i * fh + ky + 1) * fw];
                            for kx in kx0..kx1 {
                                let ix = ox * p.stride + kx - p.pad;
                                let base = i * plane + iy * row + ix * n + nb;
                                let wv = w_row[kx].widen();
                                for (a, &x) in acc.iter_mut().zip(&src[base..base + len]) {
                                    *a += wv * x.widen();
                                }
                            }
                        }
                    }
                    for (o, &a) in out_px[nb..nb + len].iter_mut().zip(acc.iter()) {
                        *o = T::narrow(a);
                    }
                }
            }
        }
    });
    Tensor::new(out_shape, Layout::Chwn, out)
}

/// One output pixel at a time; innermost loop walks the filter row against
/// a unit-stride input row.
fn direct_nchw<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    let out_shape = check_shapes(input, f, p)?;
    let s = input.shape();
    let (c_i, h, w) = (s.c(), s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let (fh, fw) = (f.f_h(), f.f_w());
    let c_o = f.c_o();
    let src = input.data();
    let weights = f.data();

    let mut out = vec![T::zero(); out_shape.len()];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(slab, out_plane)| {
        let (img, o) = (slab / c_o, slab % c_o);
        let w_o = &weights[o * f.patch_len()..(o + 1) * f.patch_len()];
        let image = &src[img * c_i * h * w..(img + 1) * c_i * h * w];
        for oy in 0..ho {
            let (ky0, ky1) = valid_taps(oy, p.stride, p.pad, fh, h);
            for ox in 0..wo {
                let (kx0, kx1) = valid_taps(ox, p.stride, p.pad, fw, w);
                if kx0 == kx1 {
                    // window lies entirely in the padding
                    continue;
                }
                let ix0 = ox * p.stride + kx0 - p.pad;
                let taps = kx1 - kx0;
                let mut acc = T::Acc::zero();
                for i in 0..c_i {
                    for ky in ky0..ky1 {
                        let iy = oy * p.stride + ky - p.pad;
                        let in_row = &image[(i * h + iy) * w + ix0..(i * h + iy) * w + ix0 + taps];
                        let w_row = &w_o[(i * fh + ky) * fw + kx0..(i * fh + ky) * fw + kx1];
                        for (&a, &b) in in_row.iter().zip(w_row) {
                            acc += a.widen() * b.widen();
                        }
                    }
                }
                out_plane[oy * wo + ox] = T::narrow(acc);
            }
        }
    });
    Tensor::new(out_shape, Layout::Nchw, out)
}
