//! Four-dimensional tensors tagged with a physical data layout.

mod io;
mod matrix;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use io::{load_t4d, read_t4d, save_t4d, write_t4d, T4D_MAGIC};
pub use matrix::Matrix;

/// Physical dimension order of a 4D tensor. The last named dimension is contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Nchw,
    Chwn,
    Nhwc,
    Hwcn,
}

/// Logical axes, in the order used for every index tuple `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N = 0,
    C = 1,
    H = 2,
    W = 3,
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Nchw, Layout::Chwn, Layout::Nhwc, Layout::Hwcn];

    /// Code used by the binary tensor format.
    pub fn code(self) -> u8 {
        match self {
            Layout::Nchw => 0,
            Layout::Chwn => 1,
            Layout::Nhwc => 2,
            Layout::Hwcn => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Layout::Nchw),
            1 => Ok(Layout::Chwn),
            2 => Ok(Layout::Nhwc),
            3 => Ok(Layout::Hwcn),
            other => Err(Error::Format(format!("unknown layout code {other}"))),
        }
    }

    /// Axes from slowest-varying to contiguous.
    pub fn order(self) -> [Axis; 4] {
        use Axis::*;
        match self {
            Layout::Nchw => [N, C, H, W],
            Layout::Chwn => [C, H, W, N],
            Layout::Nhwc => [N, H, W, C],
            Layout::Hwcn => [H, W, C, N],
        }
    }

    /// Element strides indexed by logical axis `[n, c, h, w]`.
    pub fn strides(self, shape: Shape) -> [usize; 4] {
        let extents = shape.extents();
        let mut strides = [0usize; 4];
        let mut acc = 1usize;
        for axis in self.order().iter().rev() {
            strides[*axis as usize] = acc;
            acc *= extents[*axis as usize];
        }
        strides
    }

    /// The contiguous (stride 1) axis.
    pub fn innermost(self) -> Axis {
        self.order()[3]
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Nchw => "NCHW",
            Layout::Chwn => "CHWN",
            Layout::Nhwc => "NHWC",
            Layout::Hwcn => "HWCN",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NCHW" => Ok(Layout::Nchw),
            "CHWN" => Ok(Layout::Chwn),
            "NHWC" => Ok(Layout::Nhwc),
            "HWCN" => Ok(Layout::Hwcn),
            _ => Err(Error::Layout(format!("unknown layout '{s}'"))),
        }
    }
}

/// Logical extents of a 4D tensor. Every extent is in `1..=u32::MAX` and
/// the element count fits in memory-addressable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        for (name, v) in [("n", n), ("c", c), ("h", h), ("w", w)] {
            if v == 0 {
                return Err(Error::shape(format!("dimension {name} must be >= 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::shape(format!("dimension {name}={v} exceeds 32 bits")));
            }
        }
        n.checked_mul(c)
            .and_then(|x| x.checked_mul(h))
            .and_then(|x| x.checked_mul(w))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| Error::shape(format!("{n}x{c}x{h}x{w} overflows element count")))?;
        Ok(Shape { n, c, h, w })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn extents(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same shape with a different batch size.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Shape::new(n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4D tensor. Immutable once built; every transform returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    layout: Layout,
    strides: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, layout: Layout, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match {} ({} elements)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor {
            shape,
            layout,
            strides: layout.strides(shape),
            data,
        })
    }

    pub fn zeros(shape: Shape, layout: Layout) -> Self {
        Tensor {
            shape,
            layout,
            strides: layout.strides(shape),
            data: vec![T::zero(); shape.len()],
        }
    }

    /// Builds a tensor whose logical element `(n, c, h, w)` is `f(n, c, h, w)`.
    pub fn from_fn(
        shape: Shape,
        layout: Layout,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut t = Self::zeros(shape, layout);
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        let off = t.offset(n, c, h, w);
                        t.data[off] = f(n, c, h, w);
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn layout(&self) -> Layout {
        self.layout
    }

    #[inline]
    pub fn strides(&self) -> [usize; 4] {
        self.strides
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of logical element `(n, c, h, w)`; indices are not checked.
    #[inline(always)]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        n * self.strides[0] + c * self.strides[1] + h * self.strides[2] + w * self.strides[3]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Result<T> {
        let s = self.shape;
        if n >= s.n || c >= s.c || h >= s.h || w >= s.w {
            return Err(Error::Index {
                n,
                c,
                h,
                w,
                dims: s.to_string(),
            });
        }
        Ok(self.data[self.offset(n, c, h, w)])
    }

    /// Panicking accessor for hot test loops.
    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    /// Reinterprets the same flat payload under another layout tag.
    pub fn retag(self, layout: Layout) -> Self {
        Tensor {
            shape: self.shape,
            layout,
            strides: layout.strides(self.shape),
            data: self.data,
        }
    }

    /// Logical comparison: every corresponding pair must satisfy
    /// `|x - y| <= rel_tol * max(|x|, |y|, 1)`. Layouts may differ.
    pub fn approx_equal(&self, other: &Tensor<T>, rel_tol: f64) -> Result<bool> {
        Ok(self.max_rel_diff(other)? <= rel_tol)
    }

    /// Largest value of `|x - y| / max(|x|, |y|, 1)` over all logical positions.
    /// NaN on either side yields infinity.
    pub fn max_rel_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot compare {} with {}",
                self.shape, other.shape
            )));
        }
        let mut worst = 0.0f64;
        if self.layout == other.layout {
            for (&x, &y) in self.data.iter().zip(&other.data) {
                worst = worst.max(rel_diff(x.as_f64(), y.as_f64()));
            }
            return Ok(worst);
        }
        let s = self.shape;
        for n in 0..s.n {
            for c in 0..s.c {
                for h in 0..s.h {
                    for w in 0..s.w {
                        let x = self.get(n, c, h, w).as_f64();
                        let y = other.get(n, c, h, w).as_f64();
                        worst = worst.max(rel_diff(x, y));
                    }
                }
            }
        }
        Ok(worst)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            layout: self.layout,
            strides: self.strides,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            layout: self.layout,
            strides: self.strides,
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }

    /// Copies images `range` along N into a new tensor of the same layout.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.n {
            return Err(Error::shape(format!(
                "batch range {range:?} invalid for N={}",
                self.shape.n
            )));
        }
        let s = self.shape.with_n(range.end - range.start)?;
        Ok(Tensor::from_fn(s, self.layout, |n, c, h, w| {
            self.get(n + range.start, c, h, w)
        }))
    }
}

#[inline]
fn rel_diff(x: f64, y: f64) -> f64 {
    if x.is_nan() || y.is_nan() {
        return f64::INFINITY;
    }
    if x == y {
        return 0.0;
    }
    (x - y).abs() / x.abs().max(y.abs()).max(1.0)
}

/// Convolution weights stored in `(c_o, c_i, f_h, f_w)` order regardless of
/// the activation layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter<T> {
    c_o: usize,
    c_i: usize,
    f_h: usize,
    f_w: usize,
    data: Vec<T>,
}

impl<T: Real> Filter<T> {
    pub fn new(c_o: usize, c_i: usize, f_h: usize, f_w: usize, data: Vec<T>) -> Result<Self> {
        // reuse the 4D extent checks
        let s = Shape::new(c_o, c_i, f_h, f_w)?;
        if data.len() != s.len() {
            return Err(Error::shape(format!(
                "filter data length {} does not match {}",
                data.len(),
                s
            )));
        }
        Ok(Filter {
            c_o,
            c_i,
            f_h,
            f_w,
            data,
        })
    }

    pub fn from_fn(
        c_o: usize,
        c_i: usize,
        f_h: usize,
        f_w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(c_o * c_i * f_h * f_w);
        for o in 0..c_o {
            for i in 0..c_i {
                for y in 0..f_h {
                    for x in 0..f_w {
                        data.push(f(o, i, y, x));
                    }
                }
            }
        }
        Self::new(c_o, c_i, f_h, f_w, data)
    }

    #[inline]
    pub fn c_o(&self) -> usize {
        self.c_o
    }
    #[inline]
    pub fn c_i(&self) -> usize {
        self.c_i
    }
    #[inline]
    pub fn f_h(&self) -> usize {
        self.f_h
    }
    #[inline]
    pub fn f_w(&self) -> usize {
        self.f_w
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn get(&self, o: usize, i: usize, y: usize, x: usize) -> T {
        self.data[((o * self.c_i + i) * self.f_h + y) * self.f_w + x]
    }

    /// Window size of one output channel: `c_i * f_h * f_w`.
    pub fn patch_len(&self) -> usize {
        self.c_i * self.f_h * self.f_w
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Filter {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: Shape, layout: Layout) -> Tensor<f32> {
        Tensor::new(shape, layout, (0..shape.len()).map(|x| x as f32).collect()).unwrap()
    }

    #[test]
    fn nchw_indexing_follows_prefix_product() {
        let t = iota(Shape::new(2, 2, 2, 2).unwrap(), Layout::Nchw);
        assert_eq!(t.at(1, 0, 0, 0).unwrap(), 8.0);
        assert_eq!(t.at(0, 1, 0, 0).unwrap(), 4.0);
        assert_eq!(t.at(0, 0, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn chwn_has_unit_stride_batch() {
        let t = iota(Shape::new(2, 2, 2, 2).unwrap(), Layout::Chwn);
        assert_eq!(t.at(0, 0, 0, 1).unwrap(), 2.0);
        assert_eq!(t.at(1, 0, 0, 0).unwrap(), 1.0);
        assert_eq!(t.at(0, 0, 0, 0).unwrap(), t.data()[0]);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let t = iota(Shape::new(2, 2, 2, 2).unwrap(), Layout::Nchw);
        assert!(matches!(t.at(2, 0, 0, 0), Err(Error::Index { .. })));
        assert!(matches!(t.at(0, 0, 0, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn innermost_stride_is_one() {
        let s = Shape::new(3, 5, 7, 2).unwrap();
        for l in Layout::ALL {
            let st = l.strides(s);
            assert_eq!(st[l.innermost() as usize], 1, "{l}");
        }
    }

    #[test]
    fn shape_rejects_zero_and_overflow() {
        assert!(Shape::new(0, 1, 1, 1).is_err());
        assert!(Shape::new(1, 1, 1, (u32::MAX as usize) + 1).is_err());
        let big = u32::MAX as usize;
        assert!(Shape::new(big, big, big, big).is_err());
    }

    #[test]
    fn data_length_must_match() {
        let s = Shape::new(1, 2, 2, 2).unwrap();
        assert!(Tensor::<f32>::new(s, Layout::Nchw, vec![0.0; 7]).is_err());
    }

    #[test]
    fn approx_equal_detects_violation() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        let a = iota(s, Layout::Nchw);
        assert!(a.approx_equal(&a, 0.0).unwrap());
        let mut d = a.data().to_vec();
        let tol = 1e-3;
        d[3] += (2.0 * tol * 3.0) as f32;
        let b = Tensor::new(s, Layout::Nchw, d).unwrap();
        assert!(!a.approx_equal(&b, tol).unwrap());
    }

    #[test]
    fn approx_equal_across_layouts() {
        let s = Shape::new(2, 3, 2, 2).unwrap();
        let f = |n, c, h, w| (n * 100 + c * 10 + h * 3 + w) as f32;
        let a = Tensor::from_fn(s, Layout::Nchw, f);
        let b = Tensor::from_fn(s, Layout::Chwn, f);
        assert_ne!(a.data(), b.data());
        assert!(a.approx_equal(&b, 0.0).unwrap());
    }

    #[test]
    fn approx_equal_rejects_dim_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2).unwrap(), Layout::Nchw);
        let b = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 1).unwrap(), Layout::Nchw);
        assert!(matches!(a.approx_equal(&b, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn layout_parse_and_codes() {
        for l in Layout::ALL {
            assert_eq!(Layout::from_code(l.code()).unwrap(), l);
            assert_eq!(l.name().parse::<Layout>().unwrap(), l);
        }
        assert!(Layout::from_code(9).is_err());
        assert!("nhcw".parse::<Layout>().is_err());
    }

    #[test]
    fn filter_indexing() {
        let f = Filter::<f64>::from_fn(2, 3, 2, 2, |o, i, y, x| (o * 1000 + i * 100 + y * 10 + x) as f64)
            .unwrap();
        assert_eq!(f.get(1, 2, 1, 0), 1210.0);
        assert_eq!(f.patch_len(), 12);
        assert!(Filter::<f32>::new(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
