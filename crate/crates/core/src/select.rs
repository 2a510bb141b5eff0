//! Per-layer data-layout choice and the one-time sweep that calibrates it.
//!
//! Convolutions prefer CHWN when channels are few (`c < c_t`, where the
//! unroll step of the matrix route costs most) or the batch is large
//! (`n >= n_t`, enough images for both unit-stride access and reuse);
//! otherwise NCHW. Pooling always prefers CHWN.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::conv::{conv_direct, conv_gemm, ConvParams};
use crate::error::{Error, Result};
use crate::random::{uniform_filter, uniform_tensor};
use crate::tensor::{Layout, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Convolution,
    Pooling,
    Softmax,
    FullyConnected,
    Input,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Convolution => "conv",
            LayerKind::Pooling => "pool",
            LayerKind::Softmax => "softmax",
            LayerKind::FullyConnected => "fc",
            LayerKind::Input => "input",
        }
    }

    /// Conv and pool layers carry a selectable 4D layout.
    pub fn has_layout(self) -> bool {
        matches!(self, LayerKind::Convolution | LayerKind::Pooling)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeuristicThresholds {
    pub c_t: usize,
    pub n_t: usize,
}

impl HeuristicThresholds {
    /// Thresholds measured on a GTX Titan Black.
    pub const TITAN_BLACK: HeuristicThresholds = HeuristicThresholds { c_t: 32, n_t: 128 };
    /// Thresholds measured on a GTX Titan X.
    pub const TITAN_X: HeuristicThresholds = HeuristicThresholds { c_t: 128, n_t: 64 };

    pub fn new(c_t: usize, n_t: usize) -> Result<Self> {
        if c_t == 0 || n_t == 0 {
            return Err(Error::Plan("thresholds must be >= 1".into()));
        }
        Ok(HeuristicThresholds { c_t, n_t })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "titan-black" => Some(Self::TITAN_BLACK),
            "titan-x" => Some(Self::TITAN_X),
            _ => None,
        }
    }
}

impl fmt::Display for HeuristicThresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(c_t={}, n_t={})", self.c_t, self.n_t)
    }
}

/// `n` is the batch size and `c` the layer's input channel count.
pub fn choose_layout(kind: LayerKind, n: usize, c: usize, th: HeuristicThresholds) -> Layout {
    match kind {
        LayerKind::Pooling => Layout::Chwn,
        LayerKind::Convolution => {
            if c < th.c_t || n >= th.n_t {
                Layout::Chwn
            } else {
                Layout::Nchw
            }
        }
        LayerKind::Softmax | LayerKind::FullyConnected | LayerKind::Input => Layout::Nchw,
    }
}

/// One timing request: run the layout's preferred convolution at `(n, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub layout: Layout,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub probe: Probe,
    pub seconds: f64,
}

/// Sweep points. The batch sweep runs at `fixed_c`, the channel sweep at `fixed_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationGrid {
    pub n_values: Vec<usize>,
    pub c_values: Vec<usize>,
    pub fixed_c: usize,
    pub fixed_n: usize,
}

impl Default for CalibrationGrid {
    /// Batch `{16, 32, 64, 128}` and channels `{3, 16, 32, 64, 128, 256}`,
    /// anchored on the CONV7 layer (`N = 64`, `C = 256`).
    fn default() -> Self {
        CalibrationGrid {
            n_values: vec![16, 32, 64, 128],
            c_values: vec![3, 16, 32, 64, 128, 256],
            fixed_c: 256,
            fixed_n: 64,
        }
    }
}

impl CalibrationGrid {
    /// Denser grid: every multiple of 16 in the batch range plus the
    /// midpoints between the default channel points.
    pub fn fine() -> Self {
        CalibrationGrid {
            n_values: (1..=8).map(|k| 16 * k).collect(),
            c_values: vec![3, 8, 16, 24, 32, 48, 64, 96, 128, 192, 256],
            fixed_c: 256,
            fixed_n: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: HeuristicThresholds,
    pub samples: Vec<Sample>,
}

pub fn calibrate(bench: impl FnMut(&Probe) -> Result<f64>) -> Result<Calibration> {
    calibrate_on(&CalibrationGrid::default(), bench)
}

/// Runs every probe strictly in sequence. `c_t` is the smallest swept
/// channel count at which NCHW is faster (one past the largest when it
/// never is); `n_t` is the smallest swept batch at which CHWN is faster
/// (one past the largest when it never is).
pub fn calibrate_on(
    grid: &CalibrationGrid,
    mut bench: impl FnMut(&Probe) -> Result<f64>,
) -> Result<Calibration> {
    if grid.n_values.is_empty() || grid.c_values.is_empty() {
        return Err(Error::Calibration {
            completed: 0,
            reason: "empty calibration grid".into(),
        });
    }
    let mut samples = Vec::new();
    let mut run = |layout, n, c, samples: &mut Vec<Sample>| -> Result<f64> {
        let probe = Probe { layout, n, c };
        let seconds = bench(&probe).map_err(|e| Error::Calibration {
            completed: samples.len(),
            reason: format!("{layout} n={n} c={c}: {e}"),
        })?;
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::Calibration {
                completed: samples.len(),
                reason: format!("{layout} n={n} c={c}: invalid timing {seconds}"),
            });
        }
        samples.push(Sample { probe, seconds });
        Ok(seconds)
    };

    let mut n_t = None;
    for &n in &grid.n_values {
        let chwn = run(Layout::Chwn, n, grid.fixed_c, &mut samples)?;
        let nchw = run(Layout::Nchw, n, grid.fixed_c, &mut samples)?;
        if n_t.is_none() && chwn < nchw {
            n_t = Some(n);
        }
    }
    let mut c_t = None;
    for &c in &grid.c_values {
        let chwn = run(Layout::Chwn, grid.fixed_n, c, &mut samples)?;
        let nchw = run(Layout::Nchw, grid.fixed_n, c, &mut samples)?;
        if c_t.is_none() && nchw < chwn {
            c_t = Some(c);
        }
    }
    let thresholds = HeuristicThresholds {
        c_t: c_t.unwrap_or(grid.c_values.iter().max().unwrap() + 1),
        n_t: n_t.unwrap_or(grid.n_values.iter().max().unwrap() + 1),
    };
    Ok(Calibration { thresholds, samples })
}

/// CONV7-shaped layer used for host calibration; the output-channel count
/// and repeat count are the knobs for trading fidelity against run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBench {
    pub c_out: usize,
    pub extent: usize,
    pub filter: usize,
    pub pad: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ConvBench {
    fn default() -> Self {
        ConvBench {
            c_out: 384,
            extent: 13,
            filter: 3,
            pad: 1,
            repeats: 5,
            seed: 42,
        }
    }
}

/// Host measurement: CHWN probes time the direct kernel, NCHW probes time
/// the im2col + GEMM route. Median of `repeats` after one warm-up run.
pub fn host_bench(cfg: ConvBench) -> impl FnMut(&Probe) -> Result<f64> {
    move |probe: &Probe| {
        let shape = Shape::new(probe.n, probe.c, cfg.extent, cfg.extent)?;
        let input = uniform_tensor::<f32>(shape, probe.layout, cfg.seed);
        let filter = uniform_filter::<f32>(cfg.c_out, probe.c, cfg.filter, cfg.filter, cfg.seed + 1);
        let params = ConvParams::new(1, cfg.pad)?;
        let run = || -> Result<f64> {
            let start = Instant::now();
            let out = match probe.layout {
                Layout::Chwn => conv_direct(&input, &filter, params)?,
                Layout::Nchw => conv_gemm(&input, &filter, params)?,
                other => return Err(Error::Layout(format!("no calibration kernel for {other}"))),
            };
            std::hint::black_box(out);
            Ok(start.elapsed().as_secs_f64())
        };
        run()?;
        let mut times = (0..cfg.repeats.max(1)).map(|_| run()).collect::<Result<Vec<_>>>()?;
        times.sort_by(|a, b| a.total_cmp(b));
        Ok(times[times.len() / 2])
    }
}

/// One line: `c_t=<int> n_t=<int> host=<string> timestamp=<iso8601>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationRecord {
    pub thresholds: HeuristicThresholds,
    pub host: String,
    pub timestamp: String,
}

impl CalibrationRecord {
    /// Stamps thresholds with this machine's host name and the current UTC time.
    pub fn for_this_host(thresholds: HeuristicThresholds) -> Self {
        CalibrationRecord {
            thresholds,
            host: host_name(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format!("{self}\n"))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

impl fmt::Display for CalibrationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "c_t={} n_t={} host={} timestamp={}",
            self.thresholds.c_t, self.thresholds.n_t, self.host, self.timestamp
        )
    }
}

impl FromStr for CalibrationRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Format(format!("calibration record: {why}"));
        let mut c_t = None;
        let mut n_t = None;
        let mut host = None;
        let mut timestamp = None;
        for field in s.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("field without '='"))?;
            match key {
                "c_t" => c_t = Some(value.parse::<usize>().map_err(|_| bad("c_t is not an integer"))?),
                "n_t" => n_t = Some(value.parse::<usize>().map_err(|_| bad("n_t is not an integer"))?),
                "host" => host = Some(value.to_string()),
                "timestamp" => {
                    chrono::DateTime::parse_from_rfc3339(value).map_err(|_| bad("timestamp is not ISO-8601"))?;
                    timestamp = Some(value.to_string());
                }
                other => return Err(bad(&format!("unknown key '{other}'"))),
            }
        }
        Ok(CalibrationRecord {
            thresholds: HeuristicThresholds::new(
                c_t.ok_or_else(|| bad("missing c_t"))?,
                n_t.ok_or_else(|| bad("missing n_t"))?,
            )?,
            host: host.ok_or_else(|| bad("missing host"))?,
            timestamp: timestamp.ok_or_else(|| bad("missing timestamp"))?,
        })
    }
}

fn host_name() -> String {
    let raw = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .unwrap_or_default();
    let cleaned: String = raw
        .trim()
        .chars()
        .map(|c| if c.is_whitespace() || c == '=' { '_' } else { c })
        .collect();
    if cleaned.is_empty() {
        "unknown".into()
    } else {
        cleaned
    }
}
