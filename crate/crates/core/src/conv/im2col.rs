use rayon::prelude::*;

use super::gemm::gemm;
use super::{check_shapes, output_extent, ConvParams};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Filter, Layout, Matrix, Tensor};

/// Unrolls receptive fields of an NCHW tensor into a
/// `(C_i*f_h*f_w) x (N*H_out*W_out)` matrix. Row `(i*f_h + ky)*f_w + kx`,
/// column `(n*H_out + oy)*W_out + ox`; padded taps are zero.
pub fn im2col<T: Real>(input: &Tensor<T>, f_h: usize, f_w: usize, p: ConvParams) -> Result<Matrix<T>> {
    require_nchw(input)?;
    let s = input.shape();
    let ho = output_extent(s.h(), f_h, p.stride, p.pad)?;
    let wo = output_extent(s.w(), f_w, p.stride, p.pad)?;
    let rows = s.c() * f_h * f_w;
    let per_image = ho * wo;
    let cols = s.n() * per_image;
    let mut m = Matrix::zeros(rows, cols);
    let data = m.data_mut();
    // image-major scratch, then scattered into the batch-wide column order
    let mut scratch = vec![T::zero(); rows * per_image];
    for n in 0..s.n() {
        unroll_image(input, n, f_h, f_w, p, ho, wo, &mut scratch);
        for r in 0..rows {
            data[r * cols + n * per_image..r * cols + (n + 1) * per_image]
                .copy_from_slice(&scratch[r * per_image..(r + 1) * per_image]);
        }
    }
    Ok(m)
}

/// Writes the `(C_i*f_h*f_w) x (H_out*W_out)` unrolled block of image `n`.
#[allow(clippy::too_many_arguments)]
fn unroll_image<T: Real>(
    input: &Tensor<T>,
    n: usize,
    f_h: usize,
    f_w: usize,
    p: ConvParams,
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let s = input.shape();
    let (h, w) = (s.h(), s.w());
    let image = &input.data()[n * s.c() * h * w..(n + 1) * s.c() * h * w];
    let cols = ho * wo;
    for i in 0..s.c() {
        for ky in 0..f_h {
            for kx in 0..f_w {
                let r = (i * f_h + ky) * f_w + kx;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &image[(i * h + iy as usize) * w..(i * h + iy as usize + 1) * w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Convolution as `[C_o x C_i*f_h*f_w] * im2col`, one image at a time so
/// each product lands directly in that image's NCHW output slab.
pub fn conv_gemm<T: Real>(input: &Tensor<T>, f: &Filter<T>, p: ConvParams) -> Result<Tensor<T>> {
    require_nchw(input)?;
    let out_shape = check_shapes(input, f, p)?;
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let k = f.patch_len();
    let per_image = ho * wo;
    let c_o = f.c_o();
    let mut out = vec![T::zero(); out_shape.len()];
    out.par_chunks_mut(c_o * per_image).enumerate().for_each_init(
        || vec![T::zero(); k * per_image],
        |cols, (n, slab)| {
            unroll_image(input, n, f.f_h(), f.f_w(), p, ho, wo, cols);
            gemm(c_o, k, per_image, f.data(), false, cols, slab);
        },
    );
    Tensor::new(out_shape, Layout::Nchw, out)
}

pub(crate) fn require_nchw<T: Real>(input: &Tensor<T>) -> Result<()> {
    if input.layout() != Layout::Nchw {
        return Err(Error::Layout(format!(
            "expected NCHW input, got {}",
            input.layout()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::conv_oracle;
    use crate::tensor::Shape;

    #[test]
    fn patches_of_3x3() {
        let s = Shape::new(1, 1, 3, 3).unwrap();
        let x = Tensor::new(s, Layout::Nchw, (1..=9).map(|v| v as f32).collect()).unwrap();
        let m = im2col(&x, 2, 2, ConvParams::default()).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 4));
        // column j is the j-th 2x2 patch in raster order
        let patches = [[1., 2., 4., 5.], [2., 3., 5., 6.], [4., 5., 7., 8.], [5., 6., 8., 9.]];
        for (j, patch) in patches.iter().enumerate() {
            for (r, &v) in patch.iter().enumerate() {
                assert_eq!(m.get(r, j), v);
            }
        }
    }

    #[test]
    fn unit_window_is_reshape() {
        let s = Shape::new(2, 3, 2, 2).unwrap();
        let x = Tensor::new(s, Layout::Nchw, (0..24).map(|v| v as f64).collect()).unwrap();
        let m = im2col(&x, 1, 1, ConvParams::default()).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 8));
        for c in 0..3 {
            for n in 0..2 {
                for px in 0..4 {
                    assert_eq!(m.get(c, n * 4 + px), x.get(n, c, px / 2, px % 2));
                }
            }
        }
    }

    #[test]
    fn padding_only_center_nonzero() {
        let x = Tensor::new(Shape::new(1, 1, 1, 1).unwrap(), Layout::Nchw, vec![5.0f32]).unwrap();
        let m = im2col(&x, 3, 3, ConvParams::new(1, 1).unwrap()).unwrap();
        assert_eq!((m.rows(), m.cols()), (9, 1));
        let expected = [0., 0., 0., 0., 5., 0., 0., 0., 0.];
        assert_eq!(m.data(), &expected);
    }

    #[test]
    fn channel_sums_with_ones_filter() {
        let s = Shape::new(2, 4, 3, 3).unwrap();
        let x = Tensor::from_fn(s, Layout::Nchw, |n, c, h, w| (n + 2 * c + 3 * h + w) as f32);
        let f = Filter::new(1, 4, 1, 1, vec![1.0f32; 4]).unwrap();
        let out = conv_gemm(&x, &f, ConvParams::default()).unwrap();
        for n in 0..2 {
            for h in 0..3 {
                for w in 0..3 {
                    let sum: f32 = (0..4).map(|c| x.get(n, c, h, w)).sum();
                    assert_eq!(out.get(n, 0, h, w), sum);
                }
            }
        }
    }

    #[test]
    fn gemm_matches_oracle_with_padding() {
        let x = crate::random::uniform_tensor::<f32>(Shape::new(3, 5, 8, 6).unwrap(), Layout::Nchw, 4);
        let f = crate::random::uniform_filter::<f32>(7, 5, 3, 3, 5);
        for (stride, pad) in [(1, 0), (2, 1), (1, 2)] {
            let p = ConvParams::new(stride, pad).unwrap();
            let out = conv_gemm(&x, &f, p).unwrap();
            assert!(out.approx_equal(&conv_oracle(&x, &f, p).unwrap(), 1e-5).unwrap());
        }
    }

    #[test]
    fn gemm_rejects_chwn() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3).unwrap(), Layout::Chwn);
        let f = Filter::new(1, 1, 1, 1, vec![1.0f32]).unwrap();
        assert!(matches!(conv_gemm(&x, &f, ConvParams::default()), Err(Error::Layout(_))));
        assert!(matches!(im2col(&x, 1, 1, ConvParams::default()), Err(Error::Layout(_))));
    }
}
