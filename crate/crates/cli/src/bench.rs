//! Layer and transform micro-benchmarks. Every timed configuration is
//! checked against its oracle first; a mismatch aborts the run.

use std::fmt::Write as _;
use std::time::Instant;

use cnnlayout::conv::{conv_oracle, ConvAlgorithm};
use cnnlayout::layout::{transform, transform_naive, transform_tiled, TransformPlan, DEFAULT_TILE, WIDE_COPY_MIN_N};
use cnnlayout::pool::{
    autotune_pool, pool_coarsened, pool_layout, pool_oracle, wall_clock_cost, AccessReport, CoarseningPlan, PoolParams,
    INITIAL_FACTOR,
};
use cnnlayout::random::{uniform_filter, uniform_matrix, uniform_tensor};
use cnnlayout::softmax::{softmax_fused, softmax_reference, softmax_reference_traced, PassReport};
use cnnlayout::{Layout, Matrix, Shape, Tensor};

use crate::error::CliError;
use crate::fixtures::{Fixture, FixtureKind};

/// Tolerance for softmax and average-pool checks.
pub const SOFTMAX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub scale: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Run only this layout, if set.
    pub layout: Option<Layout>,
    /// Run only this algorithm label (`direct`, `gemm`, `fft`, `plain`,
    /// `coarsened`, `reference`, `fused`), if set.
    pub algorithm: Option<&'static str>,
    /// Include a hill-climbed coarsening row for pooling fixtures.
    pub autotune: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            scale: crate::fixtures::DEFAULT_SCALE,
            repeats: 5,
            seed: 42,
            layout: None,
            algorithm: None,
            autotune: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Checked against the oracle before timing.
    Verified,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub fixture: String,
    pub layout: Layout,
    pub algorithm: String,
    pub nanos: Option<u64>,
    pub gbytes_per_s: Option<f64>,
    pub input_loads: Option<u64>,
    pub verdict: Verdict,
    /// Largest relative difference from the oracle, when verified.
    pub max_rel_diff: Option<f64>,
    pub access: Option<AccessReport>,
    pub passes: Option<PassReport>,
}

impl LayerRow {
    pub const CSV_HEADER: &'static str = "fixture,layout,algorithm,nanos,gbytes_per_s,input_loads,verified";

    fn skipped(fixture: &Fixture, layout: Layout, algorithm: &str, reason: &str) -> Self {
        LayerRow {
            fixture: fixture.id.into(),
            layout,
            algorithm: algorithm.into(),
            nanos: None,
            gbytes_per_s: None,
            input_loads: None,
            verdict: Verdict::Skipped(reason.into()),
            max_rel_diff: None,
            access: None,
            passes: None,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.verdict == Verdict::Verified
    }

    pub fn csv_line(&self) -> String {
        let verified = match &self.verdict {
            Verdict::Verified => "yes".to_string(),
            Verdict::Skipped(reason) => format!("skipped ({reason})"),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.fixture,
            self.layout.name().to_ascii_lowercase(),
            self.algorithm,
            self.nanos.map_or("NA".into(), |v| v.to_string()),
            self.gbytes_per_s.map_or("NA".into(), |v| format!("{v:.3}")),
            self.input_loads.map_or(String::new(), |v| v.to_string()),
            verified
        )
    }
}

pub fn layer_csv(rows: &[LayerRow]) -> String {
    let mut s = format!("{}\n", LayerRow::CSV_HEADER);
    for r in rows {
        writeln!(s, "{}", r.csv_line()).unwrap();
    }
    s
}

/// Median wall clock of `repeats` runs, in nanoseconds.
pub fn median_nanos<T>(repeats: usize, mut run: impl FnMut() -> T) -> u64 {
    let mut samples: Vec<u64> = (0..repeats.max(1))
        .map(|_| {
            let t0 = Instant::now();
            std::hint::black_box(run());
            t0.elapsed().as_nanos().min(u64::MAX as u128) as u64
        })
        .collect();
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn gbytes(bytes: usize, nanos: u64) -> f64 {
    bytes as f64 / nanos.max(1) as f64
}

fn wanted(opts: &BenchOptions, layout: Layout, algorithm: &str) -> bool {
    opts.layout.is_none_or(|l| l == layout) && opts.algorithm.is_none_or(|a| algorithm.starts_with(a))
}

/// Benchmarks one fixture at `opts.scale`.
pub fn bench_layer(fixture: &Fixture, opts: &BenchOptions) -> Result<Vec<LayerRow>, CliError> {
    let f = fixture.scaled(opts.scale);
    match f.kind {
        FixtureKind::Conv { .. } => bench_conv(&f, opts),
        FixtureKind::Pool { .. } => bench_pool(&f, opts),
        FixtureKind::Class { .. } => bench_class(&f, opts),
    }
}

fn mismatch(f: &Fixture, layout: Layout, algorithm: &str, diff: f64, tolerance: f64) -> CliError {
    CliError::OracleMismatch {
        fixture: f.id.into(),
        layout,
        algorithm: algorithm.into(),
        diff,
        tolerance,
    }
}

fn bench_conv(fx: &Fixture, opts: &BenchOptions) -> Result<Vec<LayerRow>, CliError> {
    let FixtureKind::Conv { c_o, f, c_i, .. } = fx.kind else {
        unreachable!()
    };
    let shape = fx.input_shape()?;
    let p = fx.conv_params().expect("conv fixture has conv params");
    let x = uniform_tensor::<f32>(shape, Layout::Nchw, opts.seed);
    let filter = uniform_filter::<f32>(c_o, c_i, f, f, opts.seed.wrapping_add(1));
    let combos = [
        (Layout::Chwn, ConvAlgorithm::Direct),
        (Layout::Nchw, ConvAlgorithm::Direct),
        (Layout::Nchw, ConvAlgorithm::Gemm),
        (Layout::Nchw, ConvAlgorithm::Fft),
    ];
    let mut oracle: Option<Tensor<f32>> = None;
    let mut rows = Vec::new();
    for (layout, alg) in combos {
        if !wanted(opts, layout, alg.name()) {
            continue;
        }
        if alg == ConvAlgorithm::Fft && p.stride != 1 {
            rows.push(LayerRow::skipped(fx, layout, alg.name(), "stride unsupported"));
            continue;
        }
        let input = transform(&x, layout);
        let run = || cnnlayout::conv::conv_forward(alg, &input, &filter, p);
        let first = run()?;
        let want = match &oracle {
            Some(o) => o,
            None => oracle.insert(conv_oracle(&x, &filter, p)?),
        };
        let diff = want.max_rel_diff(&first)?;
        if diff > alg.tolerance() {
            return Err(mismatch(fx, layout, alg.name(), diff, alg.tolerance()));
        }
        let nanos = median_nanos(opts.repeats, run);
        let bytes = 4 * (input.len() + filter.data().len() + first.len());
        rows.push(LayerRow {
            fixture: fx.id.into(),
            layout,
            algorithm: alg.name().into(),
            nanos: Some(nanos),
            gbytes_per_s: Some(gbytes(bytes, nanos)),
            input_loads: None,
            verdict: Verdict::Verified,
            max_rel_diff: Some(diff),
            access: None,
            passes: None,
        });
    }
    Ok(rows)
}

fn bench_pool(fx: &Fixture, opts: &BenchOptions) -> Result<Vec<LayerRow>, CliError> {
    let shape = fx.input_shape()?;
    let p = fx.pool_params().expect("pool fixture has pool params");
    let x = uniform_tensor::<f32>(shape, Layout::Nchw, opts.seed);
    let want = pool_oracle(&x, p)?;
    let chwn = transform(&x, Layout::Chwn);
    let initial = CoarseningPlan::new(INITIAL_FACTOR, INITIAL_FACTOR)?;

    enum Kernel {
        Plain(Layout),
        Coarsened(CoarseningPlan),
    }
    let mut kernels = vec![
        (Layout::Nchw, "plain".to_string(), Kernel::Plain(Layout::Nchw)),
        (Layout::Chwn, "plain".to_string(), Kernel::Plain(Layout::Chwn)),
        (Layout::Chwn, format!("coarsened-{initial}"), Kernel::Coarsened(initial)),
    ];
    if opts.autotune && wanted(opts, Layout::Chwn, "coarsened") {
        let tuned = autotune_pool(shape, p, wall_clock_cost(&chwn, p, opts.repeats.clamp(1, 3)));
        kernels.push((Layout::Chwn, format!("coarsened-auto-{tuned}"), Kernel::Coarsened(tuned)));
    }

    let mut rows = Vec::new();
    for (layout, label, kernel) in kernels {
        if !wanted(opts, layout, &label) {
            continue;
        }
        let run = |x_nchw: &Tensor<f32>, x_chwn: &Tensor<f32>, params: PoolParams| match &kernel {
            Kernel::Plain(Layout::Chwn) => pool_layout(x_chwn, params),
            Kernel::Plain(_) => pool_layout(x_nchw, params),
            Kernel::Coarsened(plan) => pool_coarsened(x_chwn, params, *plan),
        };
        let (out, access) = run(&x, &chwn, p)?;
        let diff = want.max_rel_diff(&out)?;
        if diff > 0.0 {
            return Err(mismatch(fx, layout, &label, diff, 0.0));
        }
        let nanos = median_nanos(opts.repeats, || run(&x, &chwn, p));
        let bytes = 4 * (shape.len() + out.len());
        rows.push(LayerRow {
            fixture: fx.id.into(),
            layout,
            algorithm: label,
            nanos: Some(nanos),
            gbytes_per_s: Some(gbytes(bytes, nanos)),
            input_loads: Some(access.input_loads),
            verdict: Verdict::Verified,
            max_rel_diff: Some(diff),
            access: Some(access),
            passes: None,
        });
    }
    Ok(rows)
}

fn bench_class(fx: &Fixture, opts: &BenchOptions) -> Result<Vec<LayerRow>, CliError> {
    let FixtureKind::Class { n, categories } = fx.kind else {
        unreachable!()
    };
    let logits = uniform_matrix::<f32>(n, categories, opts.seed, -8.0, 8.0);
    let wide = Matrix::new(n, categories, logits.data().iter().map(|&v| f64::from(v)).collect())?;
    let want = softmax_reference(&wide)?;
    let widen = |m: &Matrix<f32>| Matrix::new(m.rows(), m.cols(), m.data().iter().map(|&v| f64::from(v)).collect());

    let mut rows = Vec::new();
    for label in ["reference", "fused"] {
        if !wanted(opts, Layout::Nchw, label) {
            continue;
        }
        let (out, report) = if label == "reference" {
            let (out, _, report) = softmax_reference_traced(&logits)?;
            (out, report)
        } else {
            softmax_fused(&logits)?
        };
        let diff = want.max_rel_diff(&widen(&out)?)?;
        if diff > SOFTMAX_TOLERANCE {
            return Err(mismatch(fx, Layout::Nchw, label, diff, SOFTMAX_TOLERANCE));
        }
        let nanos = if label == "reference" {
            median_nanos(opts.repeats, || softmax_reference(&logits))
        } else {
            median_nanos(opts.repeats, || softmax_fused(&logits))
        };
        let elems = n * categories;
        rows.push(LayerRow {
            fixture: fx.id.into(),
            layout: Layout::Nchw,
            algorithm: label.into(),
            nanos: Some(nanos),
            gbytes_per_s: Some(gbytes(4 * elems * report.sweeps(), nanos)),
            input_loads: Some((report.matrix_reads * elems) as u64),
            verdict: Verdict::Verified,
            max_rel_diff: Some(diff),
            access: None,
            passes: Some(report),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformRow {
    pub dims: Shape,
    pub method: &'static str,
    /// `None` when the method does not apply to these dims.
    pub nanos: Option<u64>,
    pub gbytes_per_s: Option<f64>,
}

impl TransformRow {
    pub const CSV_HEADER: &'static str = "dims,method,nanos,gbytes_per_s";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.dims,
            self.method,
            self.nanos.map_or("NA".into(), |v| v.to_string()),
            self.gbytes_per_s.map_or("NA".into(), |v| format!("{v:.3}"))
        )
    }
}

pub fn transform_csv(rows: &[TransformRow]) -> String {
    let mut s = format!("{}\n", TransformRow::CSV_HEADER);
    for r in rows {
        writeln!(s, "{}", r.csv_line()).unwrap();
    }
    s
}

/// NCHW to CHWN with the naive permutation, the tiled transpose and the
/// tiled transpose with paired copies. Throughput counts one read and one
/// write per element.
pub fn bench_transform(dims: Shape, repeats: usize, seed: u64) -> Result<Vec<TransformRow>, CliError> {
    let (src, dst) = (Layout::Nchw, Layout::Chwn);
    let x = uniform_tensor::<f32>(dims, src, seed);
    let want = transform_naive(&x, dst);
    let bytes = 2 * 4 * dims.len();
    let mut rows = Vec::new();
    let nanos = median_nanos(repeats, || transform_naive(&x, dst));
    rows.push(TransformRow {
        dims,
        method: "naive",
        nanos: Some(nanos),
        gbytes_per_s: Some(gbytes(bytes, nanos)),
    });
    for wide in [false, true] {
        let method = if wide { "tiled-wide" } else { "tiled" };
        if wide && dims.n() < WIDE_COPY_MIN_N {
            rows.push(TransformRow {
                dims,
                method,
                nanos: None,
                gbytes_per_s: None,
            });
            continue;
        }
        let plan = TransformPlan::tiled(src, dst, DEFAULT_TILE, wide)?;
        let got = transform_tiled(&x, dst, &plan)?;
        if got.data() != want.data() {
            return Err(CliError::Internal(format!("{method} transform of {dims} differs from the naive permutation")));
        }
        let nanos = median_nanos(repeats, || transform_tiled(&x, dst, &plan));
        rows.push(TransformRow {
            dims,
            method,
            nanos: Some(nanos),
            gbytes_per_s: Some(gbytes(bytes, nanos)),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture;

    fn quick() -> BenchOptions {
        BenchOptions {
            repeats: 1,
            ..Default::default()
        }
    }

    #[test]
    fn cv7_both_layouts_verified() {
        let opts = BenchOptions { scale: 4, ..quick() };
        let rows = bench_layer(&fixture("CV7").unwrap(), &opts).unwrap();
        let layouts: Vec<_> = rows.iter().map(|r| (r.layout, r.algorithm.as_str())).collect();
        assert!(layouts.contains(&(Layout::Chwn, "direct")));
        assert!(layouts.contains(&(Layout::Nchw, "gemm")));
        assert!(rows.iter().all(LayerRow::is_verified));
    }

    #[test]
    fn fft_skips_strided_layers() {
        let opts = BenchOptions {
            scale: 64,
            algorithm: Some("fft"),
            ..quick()
        };
        let rows = bench_layer(&fixture("CV5").unwrap(), &opts).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].verdict, Verdict::Skipped("stride unsupported".into()));
        assert!(rows[0].csv_line().ends_with(",NA,NA,,skipped (stride unsupported)"));
    }

    #[test]
    fn class3_pass_counts() {
        let rows = bench_layer(&fixture("CLASS3").unwrap(), &quick()).unwrap();
        let sweeps: Vec<_> = rows.iter().map(|r| r.passes.unwrap().sweeps()).collect();
        assert_eq!(sweeps, [8, 2]);
        assert_eq!(rows[1].passes.unwrap().materializations, 0);
        assert_eq!(rows[0].input_loads, Some(5 * 16 * 1000));
    }

    #[test]
    fn pool_rows_count_loads() {
        let opts = BenchOptions { autotune: true, ..quick() };
        let rows = bench_layer(&fixture("PL3").unwrap(), &opts).unwrap();
        assert_eq!(rows.len(), 4);
        let plain = rows[1].input_loads.unwrap();
        assert!(rows[2].input_loads.unwrap() < plain);
        assert_eq!(rows[0].input_loads, Some(plain));
    }

    #[test]
    fn transform_rows() {
        let rows = bench_transform(Shape::new(32, 256, 8, 8).unwrap(), 1, 1).unwrap();
        let methods: Vec<_> = rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, ["naive", "tiled", "tiled-wide"]);
        assert_eq!(rows[2].nanos, None);
        assert!(rows[2].csv_line().ends_with("tiled-wide,NA,NA"));
        let single = bench_transform(Shape::new(1, 1, 1, 1).unwrap(), 1, 1).unwrap();
        assert_eq!(single.len(), 3);
        let wide = bench_transform(Shape::new(64, 4, 3, 3).unwrap(), 1, 1).unwrap();
        assert!(wide.iter().all(|r| r.nanos.is_some()));
    }

    #[test]
    fn csv_is_stable_apart_from_timing() {
        let strip = |rows: &[LayerRow]| -> Vec<String> {
            rows.iter()
                .map(|r| {
                    let line = r.csv_line();
                    let cols: Vec<&str> = line.split(',').collect();
                    format!("{},{},{},{},{}", cols[0], cols[1], cols[2], cols[5], cols[6])
                })
                .collect()
        };
        let f = fixture("PL9").unwrap();
        let a = bench_layer(&f, &quick()).unwrap();
        let b = bench_layer(&f, &quick()).unwrap();
        assert_eq!(strip(&a), strip(&b));
    }
}
