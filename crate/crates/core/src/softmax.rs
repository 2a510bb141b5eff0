//! Classifier tail: fully-connected product and softmax.
//!
//! The reference runs the five softmax steps as separate passes over the
//! whole batch, materialising every intermediate (row maxima, shifted
//! logits, exponentials, row sums). The fused version handles one row at a
//! time in a local buffer and touches the batch matrix twice: one read,
//! one write.

use rayon::prelude::*;

use crate::conv::gemm;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Layout, Matrix, Tensor};

/// Rows longer than this are streamed in blocks instead of staged whole.
pub const LOCAL_BUFFER_LIMIT: usize = 16384;
/// Leaf size of the blocked-pairwise reductions.
pub const REDUCTION_BLOCK: usize = 64;

/// Intermediates of the five-step reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxScratch<T> {
    pub maxv: Vec<T>,
    pub midv1: Vec<T>,
    pub midv2: Vec<T>,
    pub sumv: Vec<T>,
}

/// Memory-traffic bookkeeping of one softmax call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassReport {
    /// Intermediate arrays written to memory between steps. The per-row
    /// statistics (maxima and sums) count as one.
    pub materializations: usize,
    /// Full `N x C` reads.
    pub matrix_reads: usize,
    /// Full `N x C` writes, including the result.
    pub matrix_writes: usize,
}

impl PassReport {
    pub fn sweeps(&self) -> usize {
        self.matrix_reads + self.matrix_writes
    }
}

fn check_finite<T: Real>(m: &Matrix<T>) -> Result<()> {
    if let Some(pos) = m.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite logit at row {}, column {}",
            pos / m.cols(),
            pos % m.cols()
        )));
    }
    Ok(())
}

pub fn softmax_reference<T: Real>(input: &Matrix<T>) -> Result<Matrix<T>> {
    softmax_reference_traced(input).map(|(out, _, _)| out)
}

/// Five separate passes; returns the output, the materialised scratch and the traffic report.
pub fn softmax_reference_traced<T: Real>(
    input: &Matrix<T>,
) -> Result<(Matrix<T>, SoftmaxScratch<T>, PassReport)> {
    check_finite(input)?;
    let (rows, cols) = (input.rows(), input.cols());
    let x = input.data();
    let mut report = PassReport::default();

    // step 1: row maxima
    let maxv: Vec<T> = x
        .chunks_exact(cols)
        .map(|r| r.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    report.matrix_reads += 1;
    report.materializations += 1;

    // step 2: shift
    let midv1: Vec<T> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| v - maxv[i / cols])
        .collect();
    report.matrix_reads += 1;
    report.matrix_writes += 1;
    report.materializations += 1;

    // step 3: exponentiate
    let midv2: Vec<T> = midv1.iter().map(|v| v.exp()).collect();
    report.matrix_reads += 1;
    report.matrix_writes += 1;
    report.materializations += 1;

    // step 4: row sums, accumulated wide
    let sumv: Vec<T> = midv2
        .chunks_exact(cols)
        .map(|r| T::from_f64_lossy(r.iter().map(|v| v.as_f64()).sum::<f64>()))
        .collect();
    report.matrix_reads += 1;

    // step 5: normalise
    let out: Vec<T> = midv2
        .iter()
        .enumerate()
        .map(|(i, &v)| v / sumv[i / cols])
        .collect();
    report.matrix_reads += 1;
    report.matrix_writes += 1;

    let scratch = SoftmaxScratch {
        maxv,
        midv1,
        midv2,
        sumv,
    };
    Ok((Matrix::new(rows, cols, out)?, scratch, report))
}

/// Sequential fold over fixed-size leaves, then a pairwise tree over the
/// leaf results. Deterministic for a fixed leaf size.
fn blocked_reduce<T: Real>(values: &[T], leaf: impl Fn(&[T]) -> T + Sync, join: impl Fn(T, T) -> T, parallel: bool) -> T {
    let mut partials: Vec<T> = if parallel {
        values.par_chunks(REDUCTION_BLOCK).map(&leaf).collect()
    } else {
        values.chunks(REDUCTION_BLOCK).map(&leaf).collect()
    };
    while partials.len() > 1 {
        partials = partials
            .chunks(2)
            .map(|p| if p.len() == 2 { join(p[0], p[1]) } else { p[0] })
            .collect();
    }
    partials[0]
}

fn row_max<T: Real>(values: &[T], parallel: bool) -> T {
    blocked_reduce(
        values,
        |b| b.iter().copied().fold(T::neg_infinity(), T::max),
        T::max,
        parallel,
    )
}

fn row_sum<T: Real>(values: &[T], parallel: bool) -> T {
    blocked_reduce(values, |b| b.iter().copied().fold(T::zero(), |a, v| a + v), |a, b| a + b, parallel)
}

/// Single-pass softmax: each row is read once into a local buffer, reduced,
/// exponentiated and normalised there, then written once. Rows run in
/// parallel; when there are fewer rows than workers the reductions inside
/// a row are split across workers too.
pub fn softmax_fused<T: Real>(input: &Matrix<T>) -> Result<(Matrix<T>, PassReport)> {
    softmax_fused_with_limit(input, LOCAL_BUFFER_LIMIT)
}

/// [`softmax_fused`] with an explicit local-buffer threshold.
pub fn softmax_fused_with_limit<T: Real>(input: &Matrix<T>, local_limit: usize) -> Result<(Matrix<T>, PassReport)> {
    let (rows, cols) = (input.rows(), input.cols());
    let inner_parallel = rows < rayon::current_num_threads() && cols >= 4 * REDUCTION_BLOCK;
    let streamed = cols > local_limit;
    let mut out = Matrix::zeros(rows, cols);

    let bad_row = out
        .data_mut()
        .par_chunks_mut(cols)
        .zip(input.data().par_chunks(cols))
        .enumerate()
        .map_init(Vec::new, |local, (r, (dst, src))| {
            let ok = if streamed {
                fused_row_streamed(src, dst, local_limit, inner_parallel)
            } else {
                fused_row_local(src, dst, local, inner_parallel)
            };
            if ok {
                None
            } else {
                Some(r)
            }
        })
        .find_first(|bad| bad.is_some())
        .flatten();
    if let Some(r) = bad_row {
        return Err(Error::Domain(format!("non-finite logit in row {r}")));
    }

    let report = PassReport {
        materializations: 0,
        matrix_reads: if streamed { 2 } else { 1 },
        matrix_writes: 1,
    };
    Ok((out, report))
}

fn fused_row_local<T: Real>(src: &[T], dst: &mut [T], local: &mut Vec<T>, parallel: bool) -> bool {
    local.clear();
    local.extend_from_slice(src);
    if local.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let max = row_max(local, parallel);
    for v in local.iter_mut() {
        *v = (*v - max).exp();
    }
    let sum = row_sum(local, parallel);
    for (d, &v) in dst.iter_mut().zip(local.iter()) {
        *d = v / sum;
    }
    true
}

/// Two-phase variant for long rows: blockwise (max, sum) pairs merged by
/// rescaling, then a second read that writes normalised values.
fn fused_row_streamed<T: Real>(src: &[T], dst: &mut [T], block: usize, parallel: bool) -> bool {
    if src.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let stats: Vec<(T, T)> = src
        .chunks(block)
        .map(|b| {
            let m = row_max(b, parallel);
            let shifted: Vec<T> = b.iter().map(|&v| (v - m).exp()).collect();
            (m, row_sum(&shifted, parallel))
        })
        .collect();
    let max = stats.iter().map(|s| s.0).fold(T::neg_infinity(), T::max);
    let rescaled: Vec<T> = stats.iter().map(|&(m, s)| s * (m - max).exp()).collect();
    let sum = row_sum(&rescaled, false);
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = (v - max).exp() / sum;
    }
    true
}

/// `N x K` times `K x C` through the blocked GEMM.
pub fn fc_forward<T: Real>(input: &Matrix<T>, weights: &Matrix<T>) -> Result<Matrix<T>> {
    if input.cols() != weights.rows() {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            input.rows(),
            input.cols(),
            weights.rows(),
            weights.cols()
        )));
    }
    let (m, k, n) = (input.rows(), input.cols(), weights.cols());
    let mut out = Matrix::zeros(m, n);
    gemm(m, k, n, input.data(), false, weights.data(), out.data_mut());
    Ok(out)
}

/// Fully-connected layer over a 4D activation flattened per image with
/// feature index `(c*H + h)*W + w`. NCHW is already `N x CHW`; CHWN is the
/// transposed `CHW x N` view, which the GEMM reads directly.
pub fn fc_forward_tensor<T: Real>(input: &Tensor<T>, weights: &Matrix<T>) -> Result<Matrix<T>> {
    let s = input.shape();
    let k = s.c() * s.h() * s.w();
    if k != weights.rows() {
        return Err(Error::shape(format!(
            "flattened input has {k} features, weights expect {}",
            weights.rows()
        )));
    }
    let transposed = match input.layout() {
        Layout::Nchw => false,
        Layout::Chwn => true,
        other => return Err(Error::Layout(format!("cannot flatten {other} without a transform"))),
    };
    let (m, n) = (s.n(), weights.cols());
    let mut out = Matrix::zeros(m, n);
    gemm(m, k, n, input.data(), transposed, weights.data(), out.data_mut());
    Ok(out)
}
