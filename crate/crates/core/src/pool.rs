//! Pooling with load-count instrumentation and working-set coarsening.
//!
//! `out[n][c][y][x] = reduce_{ky < Y, kx < X} in[n][c][y*S + ky][x*S + kx]`
//! where `reduce` is max, or the sum divided by `Y*X`. No padding.
//!
//! Overlapped windows (`S` smaller than the window) share inputs. The plain
//! kernels load every window element for every output; the coarsened kernel
//! gives each task an `fh x fw` block of outputs and loads the union of
//! their windows once into a local buffer.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Layout, Shape, Tensor};

/// Upper bound on `fh * fw`.
pub const ACCUMULATOR_CAP: usize = 64;
pub const INITIAL_FACTOR: usize = 2;
/// Images staged per local buffer in the CHWN kernels.
const IMAGE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Max,
    Average,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(PoolMode::Max),
            "avg" | "average" | "mean" => Ok(PoolMode::Average),
            _ => Err(Error::Unsupported(format!("unknown pooling mode '{s}'"))),
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Max => "max",
            PoolMode::Average => "average",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolParams {
    pub win_h: usize,
    pub win_w: usize,
    pub stride: usize,
    pub mode: PoolMode,
}

impl PoolParams {
    pub fn new(win_h: usize, win_w: usize, stride: usize, mode: PoolMode) -> Result<Self> {
        if win_h == 0 || win_w == 0 || stride == 0 {
            return Err(Error::shape("pooling window and stride must be >= 1"));
        }
        Ok(PoolParams {
            win_h,
            win_w,
            stride,
            mode,
        })
    }

    pub fn square(win: usize, stride: usize, mode: PoolMode) -> Result<Self> {
        Self::new(win, win, stride, mode)
    }

    pub fn overlapped(&self) -> bool {
        self.stride < self.win_h.max(self.win_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoarseningPlan {
    pub fh: usize,
    pub fw: usize,
}

impl CoarseningPlan {
    pub fn new(fh: usize, fw: usize) -> Result<Self> {
        if fh == 0 || fw == 0 {
            return Err(Error::Plan("coarsening factors must be >= 1".into()));
        }
        if fh * fw > ACCUMULATOR_CAP {
            return Err(Error::Plan(format!(
                "{fh}x{fw} outputs per task exceeds the accumulator cap of {ACCUMULATOR_CAP}"
            )));
        }
        Ok(CoarseningPlan { fh, fw })
    }

    pub const UNIT: CoarseningPlan = CoarseningPlan { fh: 1, fw: 1 };
}

impl fmt::Display for CoarseningPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.fh, self.fw)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessReport {
    /// Input element reads issued by the kernel.
    pub input_loads: u64,
    pub output_stores: u64,
    /// Unique input elements covered by at least one window.
    pub distinct_inputs: u64,
}

impl std::ops::Add for AccessReport {
    type Output = AccessReport;

    fn add(self, o: AccessReport) -> AccessReport {
        AccessReport {
            input_loads: self.input_loads + o.input_loads,
            output_stores: self.output_stores + o.output_stores,
            distinct_inputs: self.distinct_inputs + o.distinct_inputs,
        }
    }
}

/// Output shape; a window larger than the image is a shape error.
pub fn pool_output_shape(input: Shape, p: PoolParams) -> Result<Shape> {
    if p.win_h > input.h() || p.win_w > input.w() {
        return Err(Error::shape(format!(
            "pooling window {}x{} larger than image {}x{}",
            p.win_h,
            p.win_w,
            input.h(),
            input.w()
        )));
    }
    if p.stride == 0 {
        return Err(Error::shape("pooling stride must be >= 1"));
    }
    let ho = (input.h() - p.win_h) / p.stride + 1;
    let wo = (input.w() - p.win_w) / p.stride + 1;
    Shape::new(input.n(), input.c(), ho, wo)
}

/// Input extent covered by `outputs` consecutive windows along one axis.
#[inline]
pub fn window_span(outputs: usize, win: usize, stride: usize) -> usize {
    if outputs == 0 {
        0
    } else if stride >= win {
        outputs * win
    } else {
        stride * (outputs - 1) + win
    }
}

/// Unique input elements touched by any window, over the whole tensor.
pub fn distinct_inputs(input: Shape, p: PoolParams) -> Result<u64> {
    let out = pool_output_shape(input, p)?;
    let rows = window_span(out.h(), p.win_h, p.stride) as u64;
    let cols = window_span(out.w(), p.win_w, p.stride) as u64;
    Ok((input.n() * input.c()) as u64 * rows * cols)
}

/// Closed-form loads of the coarsened kernel: sum over the ceil-partitioned
/// task grid of each task's receptive-field union, times `N * C`.
pub fn coarsened_load_count(input: Shape, p: PoolParams, plan: CoarseningPlan) -> Result<u64> {
    let out = pool_output_shape(input, p)?;
    let axis = |outs: usize, f: usize, win: usize| -> u64 {
        (0..outs)
            .step_by(f)
            .map(|o0| window_span(f.min(outs - o0), win, p.stride) as u64)
            .sum()
    };
    let rows = axis(out.h(), plan.fh, p.win_h);
    let cols = axis(out.w(), plan.fw, p.win_w);
    Ok((input.n() * input.c()) as u64 * rows * cols)
}

/// Ground truth in `f64`, NCHW output, any input layout.
pub fn pool_oracle<T: Real>(input: &Tensor<T>, p: PoolParams) -> Result<Tensor<T>> {
    let out_shape = pool_output_shape(input.shape(), p)?;
    let area = (p.win_h * p.win_w) as f64;
    Ok(Tensor::from_fn(out_shape, Layout::Nchw, |n, c, oy, ox| {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0f64;
        for ky in 0..p.win_h {
            for kx in 0..p.win_w {
                let v = input.get(n, c, oy * p.stride + ky, ox * p.stride + kx).as_f64();
                sum += v;
                if v > max {
                    max = v;
                }
            }
        }
        T::from_f64_lossy(match p.mode {
            PoolMode::Max => max,
            PoolMode::Average => sum / area,
        })
    }))
}

#[inline(always)]
fn fold<T: Real>(mode: PoolMode, acc: T, v: T) -> T {
    match mode {
        PoolMode::Max => {
            if v > acc {
                v
            } else {
                acc
            }
        }
        PoolMode::Average => acc + v,
    }
}

#[inline(always)]
fn init<T: Real>(mode: PoolMode) -> T {
    match mode {
        PoolMode::Max => T::neg_infinity(),
        PoolMode::Average => T::zero(),
    }
}

#[inline(always)]
fn finish<T: Real>(mode: PoolMode, acc: T, area: T) -> T {
    match mode {
        PoolMode::Max => acc,
        PoolMode::Average => acc / area,
    }
}

/// Plain kernel for CHWN or NCHW input; output keeps the input layout.
/// Issues `win_h * win_w` loads per output.
pub fn pool_layout<T: Real>(input: &Tensor<T>, p: PoolParams) -> Result<(Tensor<T>, AccessReport)> {
    let out_shape = pool_output_shape(input.shape(), p)?;
    let (out, loads) = match input.layout() {
        Layout::Nchw => pool_plain_nchw(input, p, out_shape),
        Layout::Chwn => pool_plain_chwn(input, p, out_shape),
        other => return Err(Error::Layout(format!("pooling has no {other} kernel"))),
    };
    let report = AccessReport {
        input_loads: loads,
        output_stores: out.len() as u64,
        distinct_inputs: distinct_inputs(input.shape(), p)?,
    };
    Ok((out, report))
}

fn pool_plain_nchw<T: Real>(input: &Tensor<T>, p: PoolParams, out_shape: Shape) -> (Tensor<T>, u64) {
    let s = input.shape();
    let (h, w) = (s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let area = T::from_usize(p.win_h * p.win_w).unwrap();
    let src = input.data();
    let mut out = vec![T::zero(); out_shape.len()];
    let loads: u64 = out
        .par_chunks_mut(ho * wo)
        .enumerate()
        .map(|(plane, dst)| {
            let map = &src[plane * h * w..(plane + 1) * h * w];
            let mut loads = 0u64;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = init::<T>(p.mode);
                    for ky in 0..p.win_h {
                        let row = &map[(oy * p.stride + ky) * w + ox * p.stride..][..p.win_w];
                        for &v in row {
                            acc = fold(p.mode, acc, v);
                        }
                        loads += p.win_w as u64;
                    }
                    dst[oy * wo + ox] = finish(p.mode, acc, area);
                }
            }
            loads
        })
        .sum();
    (Tensor::new(out_shape, Layout::Nchw, out).unwrap(), loads)
}

fn pool_plain_chwn<T: Real>(input: &Tensor<T>, p: PoolParams, out_shape: Shape) -> (Tensor<T>, u64) {
    let s = input.shape();
    let (n, h, w) = (s.n(), s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let area = T::from_usize(p.win_h * p.win_w).unwrap();
    let src = input.data();
    let mut out = vec![T::zero(); out_shape.len()];
    let loads: u64 = out
        .par_chunks_mut(ho * wo * n)
        .enumerate()
        .map(|(c, dst)| {
            let map = &src[c * h * w * n..(c + 1) * h * w * n];
            let mut loads = 0u64;
            let mut acc = vec![T::zero(); n];
            for oy in 0..ho {
                for ox in 0..wo {
                    acc.fill(init::<T>(p.mode));
                    for ky in 0..p.win_h {
                        for kx in 0..p.win_w {
                            let off = ((oy * p.stride + ky) * w + ox * p.stride + kx) * n;
                            for (a, &v) in acc.iter_mut().zip(&map[off..off + n]) {
                                *a = fold(p.mode, *a, v);
                            }
                            loads += n as u64;
                        }
                    }
                    for (d, &a) in dst[(oy * wo + ox) * n..(oy * wo + ox + 1) * n].iter_mut().zip(&acc) {
                        *d = finish(p.mode, a, area);
                    }
                }
            }
            loads
        })
        .sum();
    (Tensor::new(out_shape, Layout::Chwn, out).unwrap(), loads)
}

/// Input positions needed by outputs `o0..o0+f` along one axis, deduplicated
/// and ascending, plus `index[o_rel * win + k]` into that list.
fn task_axis(o0: usize, f: usize, win: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let mut positions: Vec<usize> = (0..f)
        .flat_map(|o| (0..win).map(move |k| (o0 + o) * stride + k))
        .collect();
    positions.sort_unstable();
    positions.dedup();
    let index = (0..f)
        .flat_map(|o| (0..win).map(move |k| (o, k)))
        .map(|(o, k)| positions.binary_search(&((o0 + o) * stride + k)).unwrap())
        .collect();
    (positions, index)
}

/// Coarsened CHWN kernel: each task stages the union of its `fh x fw`
/// outputs' windows (for a chunk of images) in a local buffer, loading each
/// input element once per task.
pub fn pool_coarsened<T: Real>(
    input: &Tensor<T>,
    p: PoolParams,
    plan: CoarseningPlan,
) -> Result<(Tensor<T>, AccessReport)> {
    let plan = CoarseningPlan::new(plan.fh, plan.fw)?;
    if input.layout() != Layout::Chwn {
        return Err(Error::Layout(format!(
            "coarsened pooling expects CHWN, got {}",
            input.layout()
        )));
    }
    let out_shape = pool_output_shape(input.shape(), p)?;
    let s = input.shape();
    let (n, h, w) = (s.n(), s.h(), s.w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let area = T::from_usize(p.win_h * p.win_w).unwrap();
    let src = input.data();
    let mut out = vec![T::zero(); out_shape.len()];

    let loads: u64 = out
        .par_chunks_mut(ho * wo * n)
        .enumerate()
        .map(|(c, dst)| {
            let map = &src[c * h * w * n..(c + 1) * h * w * n];
            let mut loads = 0u64;
            let mut local: Vec<T> = Vec::new();
            let mut acc: Vec<T> = Vec::new();
            for oy0 in (0..ho).step_by(plan.fh) {
                let fh = plan.fh.min(ho - oy0);
                let (rows, row_ix) = task_axis(oy0, fh, p.win_h, p.stride);
                for ox0 in (0..wo).step_by(plan.fw) {
                    let fw = plan.fw.min(wo - ox0);
                    let (cols, col_ix) = task_axis(ox0, fw, p.win_w, p.stride);
                    for nb in (0..n).step_by(IMAGE_CHUNK) {
                        let len = IMAGE_CHUNK.min(n - nb);
                        // stage the receptive-field union once
                        local.clear();
                        for &iy in &rows {
                            for &ix in &cols {
                                let off = (iy * w + ix) * n + nb;
                                local.extend_from_slice(&map[off..off + len]);
                            }
                        }
                        loads += (rows.len() * cols.len() * len) as u64;
                        for oy in 0..fh {
                            for ox in 0..fw {
                                acc.clear();
                                acc.resize(len, init::<T>(p.mode));
                                for ky in 0..p.win_h {
                                    let r = row_ix[oy * p.win_h + ky];
                                    for kx in 0..p.win_w {
                                        let cix = col_ix[ox * p.win_w + kx];
                                        let base = (r * cols.len() + cix) * len;
                                        for (a, &v) in acc.iter_mut().zip(&local[base..base + len]) {
                                            *a = fold(p.mode, *a, v);
                                        }
                                    }
                                }
                                let o = ((oy0 + oy) * wo + ox0 + ox) * n + nb;
                                for (d, &a) in dst[o..o + len].iter_mut().zip(&acc) {
                                    *d = finish(p.mode, a, area);
                                }
                            }
                        }
                    }
                }
            }
            loads
        })
        .sum();

    let report = AccessReport {
        input_loads: loads,
        output_stores: out.len() as u64,
        distinct_inputs: distinct_inputs(s, p)?,
    };
    Ok((Tensor::new(out_shape, Layout::Chwn, out)?, report))
}

/// One evaluated plan during tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub plan: CoarseningPlan,
    pub cost: f64,
}

/// Hill climb over coarsening factors: start at `(2, 2)`, then alternately
/// try `fh + 1` and `fw + 1`, keeping a step only if the measured cost
/// drops. A direction retires on its first non-improvement, or when the
/// next step would break the accumulator cap or pass the output extent.
/// `measure` returns a cost (lower is better).
pub fn autotune_pool(
    input: Shape,
    p: PoolParams,
    measure: impl FnMut(CoarseningPlan) -> f64,
) -> CoarseningPlan {
    autotune_pool_trace(input, p, measure).0
}

pub fn autotune_pool_trace(
    input: Shape,
    p: PoolParams,
    mut measure: impl FnMut(CoarseningPlan) -> f64,
) -> (CoarseningPlan, Vec<Trial>) {
    let (ho, wo) = pool_output_shape(input, p)
        .map(|s| (s.h(), s.w()))
        .unwrap_or((1, 1));
    let limits = [ho.max(INITIAL_FACTOR), wo.max(INITIAL_FACTOR)];

    let mut best = CoarseningPlan {
        fh: INITIAL_FACTOR,
        fw: INITIAL_FACTOR,
    };
    let mut best_cost = measure(best);
    let mut trials = vec![Trial {
        plan: best,
        cost: best_cost,
    }];
    let mut active = [true, true];
    let mut axis = 0;
    while active.iter().any(|&a| a) {
        if active[axis] {
            let mut factors = [best.fh, best.fw];
            factors[axis] += 1;
            let candidate = CoarseningPlan::new(factors[0], factors[1]);
            match candidate {
                Ok(plan) if factors[axis] <= limits[axis] => {
                    let cost = measure(plan);
                    trials.push(Trial { plan, cost });
                    if cost < best_cost {
                        best = plan;
                        best_cost = cost;
                    } else {
                        active[axis] = false;
                    }
                }
                _ => active[axis] = false,
            }
        }
        axis = 1 - axis;
    }
    (best, trials)
}

/// Wall-clock cost of `pool_coarsened` on `input`: median of `repeats` runs
/// after one discarded warm-up, in seconds.
pub fn wall_clock_cost<T: Real>(
    input: &Tensor<T>,
    p: PoolParams,
    repeats: usize,
) -> impl FnMut(CoarseningPlan) -> f64 + '_ {
    move |plan| {
        let run = || {
            let start = Instant::now();
            let out = pool_coarsened(input, p, plan);
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(out).map(|_| elapsed).unwrap_or(f64::INFINITY)
        };
        run();
        let mut samples: Vec<f64> = (0..repeats.max(1)).map(|_| run()).collect();
        samples.sort_by(|a, b| a.total_cmp(b));
        samples[samples.len() / 2]
    }
}
