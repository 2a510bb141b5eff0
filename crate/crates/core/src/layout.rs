//! Layout transformation between physical dimension orders.
//!
//! CHWN and NCHW keep C, H and W in the same relative order, so moving
//! between them is a 2D transpose of an `[N] x [C*H*W]` view. That pair
//! gets a cache-tiled transpose with an optional paired-element copy; every
//! other pair goes through the plain index permutation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Layout, Shape, Tensor};

pub const DEFAULT_TILE: usize = 32;
pub const MIN_TILE: usize = 8;
pub const MAX_TILE: usize = 128;
/// Smallest batch extent for which paired copies are enabled.
pub const WIDE_COPY_MIN_N: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformMethod {
    /// Direct 4-nested permutation loop.
    Naive,
    /// Flattened 2D tiled transpose.
    Tiled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformPlan {
    pub src: Layout,
    pub dst: Layout,
    pub tile: usize,
    pub wide_copy: bool,
    pub method: TransformMethod,
}

impl TransformPlan {
    pub fn tiled(src: Layout, dst: Layout, tile: usize, wide_copy: bool) -> Result<Self> {
        if !is_flattenable(src, dst) {
            return Err(Error::Plan(format!(
                "{src}->{dst} cannot be flattened to a 2D transpose"
            )));
        }
        if !tile.is_power_of_two() || !(MIN_TILE..=MAX_TILE).contains(&tile) {
            return Err(Error::Plan(format!(
                "tile {tile} must be a power of two in [{MIN_TILE}, {MAX_TILE}]"
            )));
        }
        Ok(TransformPlan {
            src,
            dst,
            tile,
            wide_copy,
            method: TransformMethod::Tiled,
        })
    }

    pub fn naive(src: Layout, dst: Layout) -> Self {
        TransformPlan {
            src,
            dst,
            tile: DEFAULT_TILE,
            wide_copy: false,
            method: TransformMethod::Naive,
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.method, self.wide_copy) {
            (TransformMethod::Naive, _) => "naive",
            (TransformMethod::Tiled, false) => "tiled",
            (TransformMethod::Tiled, true) => "tiled-wide",
        }
    }
}

/// True for the CHWN/NCHW pair, whose C, H, W keep their relative order.
pub fn is_flattenable(src: Layout, dst: Layout) -> bool {
    matches!(
        (src, dst),
        (Layout::Chwn, Layout::Nchw) | (Layout::Nchw, Layout::Chwn)
    )
}

/// Default plan: tile 32; paired copies iff the pair is flattenable and `N >= 64`.
pub fn make_plan(src: Layout, dst: Layout, shape: Shape) -> TransformPlan {
    if is_flattenable(src, dst) {
        TransformPlan {
            src,
            dst,
            tile: DEFAULT_TILE,
            wide_copy: shape.n() >= WIDE_COPY_MIN_N,
            method: TransformMethod::Tiled,
        }
    } else {
        TransformPlan::naive(src, dst)
    }
}

/// Reference permutation: walks the source in its physical order and
/// scatters each element to its destination offset.
pub fn transform_naive<T: Real>(t: &Tensor<T>, dst: Layout) -> Tensor<T> {
    if t.layout() == dst {
        return t.clone();
    }
    let shape = t.shape();
    let extents = shape.extents();
    let order = t.layout().order().map(|a| a as usize);
    let dst_strides = dst.strides(shape);
    let (e0, e1, e2, e3) = (
        extents[order[0]],
        extents[order[1]],
        extents[order[2]],
        extents[order[3]],
    );
    let (s0, s1, s2, s3) = (
        dst_strides[order[0]],
        dst_strides[order[1]],
        dst_strides[order[2]],
        dst_strides[order[3]],
    );

    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    let mut i = 0;
    for a in 0..e0 {
        for b in 0..e1 {
            for c in 0..e2 {
                let base = a * s0 + b * s1 + c * s2;
                for d in 0..e3 {
                    out[base + d * s3] = src[i];
                    i += 1;
                }
            }
        }
    }
    Tensor::new(shape, dst, out).expect("permutation preserves length")
}

/// Tiled transpose for CHWN <-> NCHW.
pub fn transform_tiled<T: Real>(t: &Tensor<T>, dst: Layout, plan: &TransformPlan) -> Result<Tensor<T>> {
    if plan.method != TransformMethod::Tiled || !is_flattenable(t.layout(), dst) {
        return Err(Error::Plan(format!(
            "tiled transform does not support {}->{dst}",
            t.layout()
        )));
    }
    if plan.src != t.layout() || plan.dst != dst {
        return Err(Error::Plan(format!(
            "plan is for {}->{}, tensor requests {}->{dst}",
            plan.src,
            plan.dst,
            t.layout()
        )));
    }
    let shape = t.shape();
    if plan.wide_copy && shape.n() < WIDE_COPY_MIN_N {
        return Err(Error::Plan(format!(
            "paired copy needs N >= {WIDE_COPY_MIN_N}, got N = {}",
            shape.n()
        )));
    }
    let n = shape.n();
    let chw = shape.c() * shape.h() * shape.w();
    // CHWN is a [CHW][N] row-major matrix, NCHW is [N][CHW].
    let (rows, cols) = match t.layout() {
        Layout::Chwn => (chw, n),
        _ => (n, chw),
    };
    let mut out = vec![T::zero(); t.len()];
    transpose_tiled(t.data(), rows, cols, &mut out, plan.tile, plan.wide_copy);
    Tensor::new(shape, dst, out)
}

/// Picks the planned method for `src -> dst` and runs it.
pub fn transform<T: Real>(t: &Tensor<T>, dst: Layout) -> Tensor<T> {
    if t.layout() == dst {
        return t.clone();
    }
    let plan = make_plan(t.layout(), dst, t.shape());
    match plan.method {
        TransformMethod::Naive => transform_naive(t, dst),
        TransformMethod::Tiled => transform_tiled(t, dst, &plan).expect("plan built for this tensor"),
    }
}

/// `dst[c * rows + r] = src[r * cols + c]`, staged through a `tile x tile`
/// scratch block so reads and writes both run unit-stride within a tile.
/// Column bands of `src` (row bands of `dst`) are independent.
fn transpose_tiled<T: Copy + Send + Sync + Default>(
    src: &[T],
    rows: usize,
    cols: usize,
    dst: &mut [T],
    tile: usize,
    wide: bool,
) {
    debug_assert_eq!(src.len(), rows * cols);
    dst.par_chunks_mut(tile * rows)
        .enumerate()
        .for_each_init(
            || vec![T::default(); tile * tile],
            |scratch, (band, out)| {
                let cb = band * tile;
                let cl = tile.min(cols - cb);
                for rb in (0..rows).step_by(tile) {
                    let rl = tile.min(rows - rb);
                    if wide {
                        load_tile_wide(src, cols, rb, rl, cb, cl, scratch, tile);
                        store_tile_wide(out, rows, rb, rl, cl, scratch, tile);
                    } else {
                        load_tile(src, cols, rb, rl, cb, cl, scratch, tile);
                        store_tile(out, rows, rb, rl, cl, scratch, tile);
                    }
                }
            },
        );
}

// scratch holds the tile transposed: scratch[j * tile + i] = src[rb + i][cb + j]

#[inline]
#[allow(clippy::too_many_arguments)]
fn load_tile<T: Copy>(
    src: &[T],
    cols: usize,
    rb: usize,
    rl: usize,
    cb: usize,
    cl: usize,
    scratch: &mut [T],
    tile: usize,
) {
    for i in 0..rl {
        let row = &src[(rb + i) * cols + cb..(rb + i) * cols + cb + cl];
        for (j, &v) in row.iter().enumerate() {
            scratch[j * tile + i] = v;
        }
    }
}

#[inline]
fn store_tile<T: Copy>(out: &mut [T], rows: usize, rb: usize, rl: usize, cl: usize, scratch: &[T], tile: usize) {
    for j in 0..cl {
        out[j * rows + rb..j * rows + rb + rl].copy_from_slice(&scratch[j * tile..j * tile + rl]);
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn load_tile_wide<T: Copy>(
    src: &[T],
    cols: usize,
    rb: usize,
    rl: usize,
    cb: usize,
    cl: usize,
    scratch: &mut [T],
    tile: usize,
) {
    for i in 0..rl {
        let row = &src[(rb + i) * cols + cb..(rb + i) * cols + cb + cl];
        let mut pairs = row.chunks_exact(2);
        let mut j = 0;
        for p in &mut pairs {
            let pair: [T; 2] = [p[0], p[1]];
            scratch[j * tile + i] = pair[0];
            scratch[(j + 1) * tile + i] = pair[1];
            j += 2;
        }
        if let [v] = pairs.remainder() {
            scratch[j * tile + i] = *v;
        }
    }
}

#[inline]
fn store_tile_wide<T: Copy>(out: &mut [T], rows: usize, rb: usize, rl: usize, cl: usize, scratch: &[T], tile: usize) {
    for j in 0..cl {
        let dst_row = &mut out[j * rows + rb..j * rows + rb + rl];
        let src_row = &scratch[j * tile..j * tile + rl];
        let mut d = dst_row.chunks_exact_mut(2);
        let mut s = src_row.chunks_exact(2);
        for (dp, sp) in (&mut d).zip(&mut s) {
            let pair: [T; 2] = [sp[0], sp[1]];
            dp.copy_from_slice(&pair);
        }
        if let ([dv], [sv]) = (d.into_remainder(), s.remainder()) {
            *dv = *sv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: Shape, layout: Layout) -> Tensor<f32> {
        Tensor::new(shape, layout, (0..shape.len()).map(|x| x as f32).collect()).unwrap()
    }

    /// Independent oracle: builds the destination by looking up each logical element.
    fn by_lookup(t: &Tensor<f32>, dst: Layout) -> Tensor<f32> {
        Tensor::from_fn(t.shape(), dst, |n, c, h, w| t.get(n, c, h, w))
    }

    #[test]
    fn naive_nchw_to_chwn_order() {
        let t = iota(Shape::new(2, 2, 2, 2).unwrap(), Layout::Nchw);
        let out = transform_naive(&t, Layout::Chwn);
        let expected = [0., 8., 1., 9., 2., 10., 3., 11., 4., 12., 5., 13., 6., 14., 7., 15.];
        assert_eq!(out.data(), &expected);
        assert_eq!(transform_naive(&out, Layout::Nchw), t);
    }

    #[test]
    fn naive_identity_is_bit_identical() {
        let t = iota(Shape::new(2, 3, 4, 5).unwrap(), Layout::Hwcn);
        assert_eq!(transform_naive(&t, Layout::Hwcn), t);
    }

    #[test]
    fn naive_matches_lookup_for_all_pairs() {
        let s = Shape::new(3, 4, 2, 5).unwrap();
        for src in Layout::ALL {
            let t = iota(s, src);
            for dst in Layout::ALL {
                assert_eq!(transform_naive(&t, dst), by_lookup(&t, dst), "{src}->{dst}");
            }
        }
    }

    #[test]
    fn tiled_handles_partial_tiles() {
        // C*H*W = 75 is not a multiple of 32
        let t = iota(Shape::new(5, 3, 5, 5).unwrap(), Layout::Chwn);
        let plan = TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 32, false).unwrap();
        let out = transform_tiled(&t, Layout::Nchw, &plan).unwrap();
        assert_eq!(out, transform_naive(&t, Layout::Nchw));
    }

    #[test]
    fn tiled_wide_odd_extents() {
        let t = iota(Shape::new(67, 3, 3, 3).unwrap(), Layout::Chwn);
        for tile in [8, 16, 32, 64, 128] {
            let plan = TransformPlan::tiled(Layout::Chwn, Layout::Nchw, tile, true).unwrap();
            let out = transform_tiled(&t, Layout::Nchw, &plan).unwrap();
            assert_eq!(out, transform_naive(&t, Layout::Nchw), "tile {tile}");
            let back_plan = TransformPlan::tiled(Layout::Nchw, Layout::Chwn, tile, true).unwrap();
            assert_eq!(transform_tiled(&out, Layout::Chwn, &back_plan).unwrap(), t);
        }
    }

    #[test]
    fn wide_copy_requires_large_batch() {
        let t = iota(Shape::new(32, 2, 2, 2).unwrap(), Layout::Chwn);
        let plan = TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 32, true).unwrap();
        assert!(matches!(transform_tiled(&t, Layout::Nchw, &plan), Err(Error::Plan(_))));
    }

    #[test]
    fn tiled_rejects_unsupported_pair_and_bad_tile() {
        assert!(TransformPlan::tiled(Layout::Nchw, Layout::Nhwc, 32, false).is_err());
        assert!(TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 24, false).is_err());
        assert!(TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 256, false).is_err());
        assert!(TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 4, false).is_err());
        let t = iota(Shape::new(2, 2, 2, 2).unwrap(), Layout::Nchw);
        let plan = TransformPlan::naive(Layout::Nchw, Layout::Nhwc);
        assert!(transform_tiled(&t, Layout::Nhwc, &plan).is_err());
        // plan source must match the tensor
        let plan = TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 32, false).unwrap();
        assert!(transform_tiled(&t, Layout::Chwn, &plan).is_err());
    }

    #[test]
    fn make_plan_rules() {
        let s128 = Shape::new(128, 3, 4, 4).unwrap();
        let s32 = Shape::new(32, 3, 4, 4).unwrap();
        let p = make_plan(Layout::Chwn, Layout::Nchw, s128);
        assert_eq!((p.tile, p.wide_copy, p.method), (32, true, TransformMethod::Tiled));
        let p = make_plan(Layout::Chwn, Layout::Nchw, s32);
        assert_eq!((p.tile, p.wide_copy, p.method), (32, false, TransformMethod::Tiled));
        assert_eq!(make_plan(Layout::Nchw, Layout::Nhwc, s128).method, TransformMethod::Naive);
        assert_eq!(make_plan(Layout::Nchw, Layout::Nchw, s128).method, TransformMethod::Naive);
    }

    #[test]
    fn single_element() {
        let t = iota(Shape::new(1, 1, 1, 1).unwrap(), Layout::Chwn);
        let plan = TransformPlan::tiled(Layout::Chwn, Layout::Nchw, 8, false).unwrap();
        assert_eq!(transform_tiled(&t, Layout::Nchw, &plan).unwrap().data(), &[0.0]);
    }
}
