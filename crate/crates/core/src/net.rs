//! Network description, per-layer layout annotation, transform planning and
//! execution with a per-layer timing report.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conv::{conv_direct, conv_fft, conv_gemm, conv_output_shape, ConvParams};
use crate::error::{Error, Result};
use crate::layout::{make_plan, transform, transform_tiled};
use crate::pool::{pool_coarsened, pool_layout, pool_output_shape, AccessReport, CoarseningPlan, PoolMode, PoolParams};
use crate::random::{uniform_filter, uniform_matrix, uniform_tensor};
use crate::scalar::Real;
use crate::select::{choose_layout, HeuristicThresholds, LayerKind};
use crate::softmax::{fc_forward, fc_forward_tensor, softmax_fused};
use crate::tensor::{Filter, Layout, Matrix, Shape, Tensor};

/// Coarsening used for CHWN pooling layers inside a network run.
pub const NET_POOL_PLAN: CoarseningPlan = CoarseningPlan { fh: 2, fw: 2 };

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Conv {
        c_out: usize,
        f: usize,
        stride: usize,
        pad: usize,
        /// Declared input channels, checked against the previous layer.
        c_in: Option<usize>,
    },
    Pool {
        win: usize,
        stride: usize,
        mode: PoolMode,
    },
    Fc {
        out: usize,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub geometry: Geometry,
    /// `None` until annotated, unless the config pins it.
    pub layout: Option<Layout>,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self.geometry {
            Geometry::Conv { .. } => LayerKind::Convolution,
            Geometry::Pool { .. } => LayerKind::Pooling,
            Geometry::Fc { .. } => LayerKind::FullyConnected,
            Geometry::Softmax => LayerKind::Softmax,
        }
    }
}

/// Activation dims between layers: a 4D map, or `n x features` once flattened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Map(Shape),
    Flat { n: usize, features: usize },
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dims::Map(s) => write!(f, "{s}"),
            Dims::Flat { n, features } => write!(f, "{n}x{features}"),
        }
    }
}

/// A validated network. Construction infers and checks every layer's shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input: Shape,
    input_layout: Option<Layout>,
    layers: Vec<LayerSpec>,
    dims: Vec<Dims>,
}

impl NetworkSpec {
    pub fn new(input: Shape, input_layout: Option<Layout>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config {
                layer: "<network>".into(),
                reason: "layer list is empty".into(),
            });
        }
        if let Some(l) = input_layout {
            check_layout("<input>", l)?;
        }
        let mut dims = vec![Dims::Map(input)];
        let mut prev_name = "<input>".to_string();
        for (i, layer) in layers.iter().enumerate() {
            let cfg = |reason: String| Error::Config {
                layer: layer.name.clone(),
                reason,
            };
            if layer.name.is_empty() {
                return Err(cfg("layer name is empty".into()));
            }
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(cfg("duplicate layer name".into()));
            }
            if let Some(l) = layer.layout {
                if !layer.kind().has_layout() {
                    return Err(cfg(format!("{} layers take no layout", layer.kind())));
                }
                check_layout(&layer.name, l)?;
            }
            let current = *dims.last().unwrap();
            let next = match (layer.geometry, current) {
                (Geometry::Conv { c_out, f, stride, pad, c_in }, Dims::Map(s)) => {
                    if let Some(c) = c_in {
                        if c != s.c() {
                            return Err(cfg(format!(
                                "expects C={c} but '{prev_name}' produces C={}",
                                s.c()
                            )));
                        }
                    }
                    if c_out == 0 || f == 0 {
                        return Err(cfg("c_out and f must be >= 1".into()));
                    }
                    let p = ConvParams::new(stride, pad).map_err(|e| cfg(e.to_string()))?;
                    Dims::Map(conv_output_shape(s, s.c(), c_out, f, f, p).map_err(|e| cfg(e.to_string()))?)
                }
                (Geometry::Pool { win, stride, mode }, Dims::Map(s)) => {
                    let p = PoolParams::square(win, stride, mode).map_err(|e| cfg(e.to_string()))?;
                    Dims::Map(pool_output_shape(s, p).map_err(|e| cfg(e.to_string()))?)
                }
                (Geometry::Conv { .. } | Geometry::Pool { .. }, Dims::Flat { .. }) => {
                    return Err(cfg(format!("needs a 4D input but '{prev_name}' produces {current}")));
                }
                (Geometry::Fc { out }, _) => {
                    if out == 0 {
                        return Err(cfg("out must be >= 1".into()));
                    }
                    let n = match current {
                        Dims::Map(s) => s.n(),
                        Dims::Flat { n, .. } => n,
                    };
                    Dims::Flat { n, features: out }
                }
                (Geometry::Softmax, _) => {
                    if i + 1 != layers.len() {
                        return Err(cfg("softmax must be the last layer".into()));
                    }
                    match current {
                        Dims::Map(s) => Dims::Flat {
                            n: s.n(),
                            features: s.c() * s.h() * s.w(),
                        },
                        flat => flat,
                    }
                }
            };
            dims.push(next);
            prev_name = layer.name.clone();
        }
        Ok(NetworkSpec {
            input,
            input_layout,
            layers,
            dims,
        })
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    /// Explicit input layout, if the config set one.
    pub fn input_layout(&self) -> Option<Layout> {
        self.input_layout
    }

    /// Layout the input tensor must arrive in: the explicit one, else the
    /// first 4D layer's, else NCHW.
    pub fn effective_input_layout(&self) -> Layout {
        self.input_layout
            .or_else(|| {
                self.layers
                    .iter()
                    .take_while(|l| l.kind().has_layout())
                    .map(|l| l.layout)
                    .next()
                    .flatten()
            })
            .unwrap_or(Layout::Nchw)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input dims of layer `i`.
    pub fn input_dims(&self, i: usize) -> Dims {
        self.dims[i]
    }

    pub fn output_dims(&self, i: usize) -> Dims {
        self.dims[i + 1]
    }

    /// The final activation dims.
    pub fn result_dims(&self) -> Dims {
        *self.dims.last().unwrap()
    }

    /// Pins (or with `None`, clears) one conv/pool layer's layout.
    pub fn set_layout(&mut self, name: &str, layout: Option<Layout>) -> Result<()> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config {
                layer: name.into(),
                reason: "no such layer".into(),
            })?;
        if !layer.kind().has_layout() {
            return Err(Error::Config {
                layer: name.into(),
                reason: format!("{} layers take no layout", layer.kind()),
            });
        }
        if let Some(l) = layout {
            check_layout(name, l)?;
        }
        layer.layout = layout;
        Ok(())
    }

    /// Pins every conv/pool layer to `layout`.
    pub fn with_uniform_layout(mut self, layout: Layout) -> Result<Self> {
        check_layout("<network>", layout)?;
        for l in self.layers.iter_mut().filter(|l| l.kind().has_layout()) {
            l.layout = Some(layout);
        }
        Ok(self)
    }

    pub fn is_annotated(&self) -> bool {
        self.layers.iter().all(|l| !l.kind().has_layout() || l.layout.is_some())
    }

    pub fn to_json(&self) -> String {
        let raw = RawNet {
            input: RawInput {
                n: self.input.n(),
                c: self.input.c(),
                h: self.input.h(),
                w: self.input.w(),
                layout: self.input_layout.map(lower),
            },
            layers: self.layers.iter().map(RawLayer::from_spec).collect(),
        };
        serde_json::to_string_pretty(&raw).expect("network spec serializes")
    }
}

fn lower(l: Layout) -> String {
    l.name().to_ascii_lowercase()
}

fn check_layout(layer: &str, l: Layout) -> Result<()> {
    match l {
        Layout::Nchw | Layout::Chwn => Ok(()),
        other => Err(Error::Config {
            layer: layer.into(),
            reason: format!("layout {other} not supported by the layer kernels (use chwn or nchw)"),
        }),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNet {
    input: RawInput,
    layers: Vec<RawLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    win: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<String>,
}

impl RawLayer {
    fn from_spec(l: &LayerSpec) -> Self {
        let mut raw = RawLayer {
            name: l.name.clone(),
            kind: l.kind().name().into(),
            ..Default::default()
        };
        match l.geometry {
            Geometry::Conv { c_out, f, stride, pad, c_in } => {
                raw.c_out = Some(c_out);
                raw.c_in = c_in;
                raw.f = Some(f);
                raw.stride = Some(stride);
                raw.pad = Some(pad);
            }
            Geometry::Pool { win, stride, mode } => {
                raw.win = Some(win);
                raw.stride = Some(stride);
                raw.mode = Some(mode.to_string());
            }
            Geometry::Fc { out } => raw.out = Some(out),
            Geometry::Softmax => {}
        }
        if l.kind().has_layout() {
            raw.layout = Some(l.layout.map_or_else(|| "auto".to_string(), lower));
        }
        raw
    }

    fn into_spec(self) -> Result<LayerSpec> {
        let name = self.name;
        let cfg = |reason: String| Error::Config {
            layer: name.clone(),
            reason,
        };
        let need = |v: Option<usize>, field: &str| v.ok_or_else(|| cfg(format!("missing field '{field}'")));
        let reject = |present: bool, field: &str| {
            if present {
                Err(cfg(format!("field '{field}' does not apply to a {} layer", self.kind)))
            } else {
                Ok(())
            }
        };
        let geometry = match self.kind.as_str() {
            "conv" => {
                reject(self.win.is_some(), "win")?;
                reject(self.mode.is_some(), "mode")?;
                reject(self.out.is_some(), "out")?;
                Geometry::Conv {
                    c_out: need(self.c_out, "c_out")?,
                    f: need(self.f, "f")?,
                    stride: self.stride.unwrap_or(1),
                    pad: self.pad.unwrap_or(0),
                    c_in: self.c_in,
                }
            }
            "pool" => {
                reject(self.c_out.is_some() || self.c_in.is_some(), "c_out")?;
                reject(self.f.is_some(), "f")?;
                reject(self.pad.is_some(), "pad")?;
                reject(self.out.is_some(), "out")?;
                let win = need(self.win, "win")?;
                Geometry::Pool {
                    win,
                    stride: self.stride.unwrap_or(win),
                    mode: match &self.mode {
                        Some(m) => m.parse().map_err(|e: Error| cfg(e.to_string()))?,
                        None => PoolMode::Max,
                    },
                }
            }
            "fc" | "softmax" => {
                let stray = [
                    (self.c_out.is_some(), "c_out"),
                    (self.c_in.is_some(), "c_in"),
                    (self.f.is_some(), "f"),
                    (self.win.is_some(), "win"),
                    (self.stride.is_some(), "stride"),
                    (self.pad.is_some(), "pad"),
                    (self.mode.is_some(), "mode"),
                    (self.layout.is_some(), "layout"),
                ];
                for (present, field) in stray {
                    reject(present, field)?;
                }
                if self.kind == "fc" {
                    Geometry::Fc { out: need(self.out, "out")? }
                } else {
                    reject(self.out.is_some(), "out")?;
                    Geometry::Softmax
                }
            }
            other => {
                return Err(cfg(format!(
                    "unsupported layer kind '{other}' (expected conv, pool, fc or softmax)"
                )))
            }
        };
        let layout = match self.layout.as_deref() {
            None | Some("auto") => None,
            Some(s) => {
                let l: Layout = s.parse().map_err(|e: Error| cfg(e.to_string()))?;
                check_layout(&name, l)?;
                Some(l)
            }
        };
        Ok(LayerSpec { name, geometry, layout })
    }
}

/// Parses and validates a JSON network config.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let raw: RawNet = serde_json::from_str(text).map_err(|e| Error::Config {
        layer: "<document>".into(),
        reason: e.to_string(),
    })?;
    let input = Shape::new(raw.input.n, raw.input.c, raw.input.h, raw.input.w).map_err(|e| Error::Config {
        layer: "<input>".into(),
        reason: e.to_string(),
    })?;
    let input_layout = match raw.input.layout.as_deref() {
        None | Some("auto") => None,
        Some(s) => Some(s.parse::<Layout>().map_err(|e| Error::Config {
            layer: "<input>".into(),
            reason: e.to_string(),
        })?),
    };
    let layers = raw.layers.into_iter().map(RawLayer::into_spec).collect::<Result<Vec<_>>>()?;
    NetworkSpec::new(input, input_layout, layers)
}

/// Sets every unpinned conv/pool layout from the heuristic in one forward
/// scan. Pinned layouts are kept, so the pass is idempotent.
pub fn annotate_layouts(spec: &NetworkSpec, th: HeuristicThresholds) -> NetworkSpec {
    let mut out = spec.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        if layer.layout.is_none() && layer.kind().has_layout() {
            if let Dims::Map(s) = spec.dims[i] {
                layer.layout = Some(choose_layout(layer.kind(), s.n(), s.c(), th));
            }
        }
    }
    out
}

/// A layout change applied to the input of layer `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformStep {
    pub position: usize,
    pub src: Layout,
    pub dst: Layout,
}

/// One step per boundary where the producer's layout differs from the
/// consumer's. A softmax reading a non-NCHW map gets one to NCHW; fully
/// connected layers read CHWN directly and need none.
pub fn plan_transforms(spec: &NetworkSpec) -> Result<Vec<TransformStep>> {
    if !spec.is_annotated() {
        return Err(Error::Plan("every conv/pool layer needs a layout before planning".into()));
    }
    let mut steps = Vec::new();
    let mut current = Some(spec.effective_input_layout());
    for (i, layer) in spec.layers.iter().enumerate() {
        let want = match layer.kind() {
            LayerKind::Convolution | LayerKind::Pooling => layer.layout,
            LayerKind::Softmax if matches!(spec.dims[i], Dims::Map(_)) => Some(Layout::Nchw),
            _ => None,
        };
        if let (Some(src), Some(dst)) = (current, want) {
            if src != dst {
                steps.push(TransformStep { position: i, src, dst });
            }
        }
        current = match spec.dims[i + 1] {
            Dims::Map(_) => want.or(current),
            Dims::Flat { .. } => None,
        };
    }
    Ok(steps)
}

/// Per-layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights<T> {
    Conv(Filter<T>),
    Fc(Matrix<T>),
    None,
}

/// A spec plus seeded weights, ready to run.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    weights: Vec<Weights<T>>,
}

impl<T: Real> Network<T> {
    /// Uniform weights scaled by `1/sqrt(fan_in)`, seeded per layer.
    pub fn seeded(spec: NetworkSpec, seed: u64) -> Self {
        let weights = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let layer_seed = seed.wrapping_add(1 + i as u64);
                match (l.geometry, spec.dims[i]) {
                    (Geometry::Conv { c_out, f, .. }, Dims::Map(s)) => {
                        let scale = T::from_f64_lossy(1.0 / ((s.c() * f * f) as f64).sqrt());
                        Weights::Conv(uniform_filter::<T>(c_out, s.c(), f, f, layer_seed).map(|v| v * scale))
                    }
                    (Geometry::Fc { out }, d) => {
                        let k = match d {
                            Dims::Map(s) => s.c() * s.h() * s.w(),
                            Dims::Flat { features, .. } => features,
                        };
                        let bound = 1.0 / (k as f64).sqrt();
                        Weights::Fc(uniform_matrix::<T>(k, out, layer_seed, -bound, bound))
                    }
                    _ => Weights::None,
                }
            })
            .collect();
        Network { spec, weights }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Weights<T>] {
        &self.weights
    }

    /// Same weights under a different annotation of the same topology.
    pub fn with_spec(&self, spec: NetworkSpec) -> Result<Self> {
        let same_topology = spec.input == self.spec.input
            && spec.layers.len() == self.spec.layers.len()
            && spec
                .layers
                .iter()
                .zip(&self.spec.layers)
                .all(|(a, b)| a.name == b.name && a.geometry == b.geometry);
        if !same_topology {
            return Err(Error::Plan("replacement spec changes the network topology".into()));
        }
        Ok(Network {
            spec,
            weights: self.weights.clone(),
        })
    }

    /// A seeded input in the layout the network expects.
    pub fn seeded_input(&self, seed: u64) -> Tensor<T> {
        let nchw = uniform_tensor::<T>(self.spec.input, Layout::Nchw, seed);
        transform(&nchw, self.spec.effective_input_layout())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Use FFT convolution for stride-1 NCHW layers.
    pub fft: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Activation<T> {
    Map(Tensor<T>),
    Flat(Matrix<T>),
}

impl<T: Real> Activation<T> {
    pub fn as_map(&self) -> Option<&Tensor<T>> {
        match self {
            Activation::Map(t) => Some(t),
            Activation::Flat(_) => None,
        }
    }

    pub fn as_flat(&self) -> Option<&Matrix<T>> {
        match self {
            Activation::Flat(m) => Some(m),
            Activation::Map(_) => None,
        }
    }

    /// Layout-independent comparison: maps are compared logically.
    pub fn max_rel_diff(&self, other: &Activation<T>) -> Result<f64> {
        match (self, other) {
            (Activation::Map(a), Activation::Map(b)) => {
                if a.layout() == b.layout() {
                    a.max_rel_diff(b)
                } else {
                    a.max_rel_diff(&transform(b, a.layout()))
                }
            }
            (Activation::Flat(a), Activation::Flat(b)) => a.max_rel_diff(b),
            _ => Err(Error::shape("cannot compare a 4D activation with a flat one")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Layer(LayerKind),
    Transform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEntry {
    pub name: String,
    pub kind: EntryKind,
    /// `chwn`, `nchw`, `flat`, or `src->dst` for transforms.
    pub layout: String,
    pub algorithm: String,
    pub nanos: u64,
    pub access: Option<AccessReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimingReport {
    pub entries: Vec<ReportEntry>,
    /// Wall clock for the whole run, including bookkeeping between entries.
    pub total_nanos: u64,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str = "layer,kind,layout,algorithm,nanos,input_loads,output_stores";

    pub fn transform_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Transform).count()
    }

    pub fn entry_nanos(&self) -> u64 {
        self.entries.iter().map(|e| e.nanos).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.entries {
            let kind = match e.kind {
                EntryKind::Layer(k) => k.name(),
                EntryKind::Transform => "transform",
            };
            let (loads, stores) = e
                .access
                .map_or((String::new(), String::new()), |a| (a.input_loads.to_string(), a.output_stores.to_string()));
            writeln!(s, "{},{kind},{},{},{},{loads},{stores}", e.name, e.layout, e.algorithm, e.nanos).unwrap();
        }
        s
    }
}

fn nanos_since(t: Instant) -> u64 {
    t.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

/// Runs the annotated network. The input must match the spec's dims and
/// its effective input layout.
pub fn run_network<T: Real>(
    net: &Network<T>,
    input: &Tensor<T>,
    opts: RunOptions,
) -> Result<(Activation<T>, TimingReport)> {
    let spec = &net.spec;
    if input.shape() != spec.input {
        return Err(Error::shape(format!(
            "input is {} but the network expects {}",
            input.shape(),
            spec.input
        )));
    }
    let expected = spec.effective_input_layout();
    if input.layout() != expected {
        return Err(Error::Layout(format!(
            "input is {} but the network expects {expected}",
            input.layout()
        )));
    }
    let steps = plan_transforms(spec)?;
    let start = Instant::now();
    let mut report = TimingReport::default();
    let mut act = Activation::Map(input.clone());

    for (i, layer) in spec.layers.iter().enumerate() {
        if let Some(step) = steps.iter().find(|s| s.position == i) {
            let Activation::Map(t) = &act else {
                unreachable!("transforms are only planned on 4D activations")
            };
            let t0 = Instant::now();
            let plan = make_plan(step.src, step.dst, t.shape());
            let moved = transform_tiled(t, step.dst, &plan)?;
            report.entries.push(ReportEntry {
                name: format!("transform@{}", layer.name),
                kind: EntryKind::Transform,
                layout: format!("{}->{}", lower(step.src), lower(step.dst)),
                algorithm: plan.label().into(),
                nanos: nanos_since(t0),
                access: None,
            });
            act = Activation::Map(moved);
        }
        let t0 = Instant::now();
        let (next, layout, algorithm, access) =
            run_layer(layer, &net.weights[i], act, opts).map_err(|e| e.in_layer(&layer.name))?;
        report.entries.push(ReportEntry {
            name: layer.name.clone(),
            kind: EntryKind::Layer(layer.kind()),
            layout,
            algorithm: algorithm.into(),
            nanos: nanos_since(t0),
            access,
        });
        act = next;
    }
    report.total_nanos = nanos_since(start);
    Ok((act, report))
}

type LayerOutcome<T> = (Activation<T>, String, &'static str, Option<AccessReport>);

fn run_layer<T: Real>(layer: &LayerSpec, w: &Weights<T>, act: Activation<T>, opts: RunOptions) -> Result<LayerOutcome<T>> {
    match (layer.geometry, w, act) {
        (Geometry::Conv { stride, pad, .. }, Weights::Conv(f), Activation::Map(x)) => {
            let p = ConvParams::new(stride, pad)?;
            let layout = lower(x.layout());
            let (y, alg) = match x.layout() {
                Layout::Chwn => (conv_direct(&x, f, p)?, "direct"),
                _ if opts.fft && stride == 1 => (conv_fft(&x, f, p)?, "fft"),
                _ => (conv_gemm(&x, f, p)?, "gemm"),
            };
            Ok((Activation::Map(y), layout, alg, None))
        }
        (Geometry::Pool { win, stride, mode }, _, Activation::Map(x)) => {
            let p = PoolParams::square(win, stride, mode)?;
            let layout = lower(x.layout());
            let (y, access, alg) = match x.layout() {
                Layout::Chwn => {
                    let (y, a) = pool_coarsened(&x, p, NET_POOL_PLAN)?;
                    (y, a, "coarsened-2x2")
                }
                _ => {
                    let (y, a) = pool_layout(&x, p)?;
                    (y, a, "plain")
                }
            };
            Ok((Activation::Map(y), layout, alg, Some(access)))
        }
        (Geometry::Fc { .. }, Weights::Fc(m), act) => {
            let (y, layout) = match act {
                Activation::Map(x) => (fc_forward_tensor(&x, m)?, lower(x.layout())),
                Activation::Flat(x) => (fc_forward(&x, m)?, "flat".to_string()),
            };
            Ok((Activation::Flat(y), layout, "gemm", None))
        }
        (Geometry::Softmax, _, act) => {
            let m = match act {
                Activation::Flat(m) => m,
                Activation::Map(x) => {
                    let s = x.shape();
                    Matrix::new(s.n(), s.c() * s.h() * s.w(), x.into_data())?
                }
            };
            let (y, _) = softmax_fused(&m)?;
            Ok((Activation::Flat(y), "flat".into(), "fused", None))
        }
        _ => Err(Error::Plan("weights or activation do not match the layer kind".into())),
    }
}

/// A timing request issued while refining conv layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileQuery {
    Conv { layer: usize, layout: Layout },
    Transform { shape: Shape, src: Layout, dst: Layout },
}

/// After annotation, times each conv layer under both layouts, charging the
/// transforms each choice would add at its two boundaries, and flips the
/// layer when the alternative is cheaper. Layers are visited in order and
/// later decisions see earlier flips.
pub fn profile_refine_with(
    spec: &NetworkSpec,
    mut cost: impl FnMut(&ProfileQuery) -> Result<f64>,
) -> Result<NetworkSpec> {
    if !spec.is_annotated() {
        return Err(Error::Plan("profile refinement needs an annotated network".into()));
    }
    let mut out = spec.clone();
    for i in 0..out.layers.len() {
        if out.layers[i].kind() != LayerKind::Convolution {
            continue;
        }
        let (Dims::Map(in_shape), Dims::Map(out_shape)) = (out.dims[i], out.dims[i + 1]) else {
            continue;
        };
        let prev = producer_layout(&out, i);
        let next = consumer_layout(&out, i);
        let mut total = |l: Layout| -> Result<f64> {
            let mut t = cost(&ProfileQuery::Conv { layer: i, layout: l })?;
            if prev != l {
                t += cost(&ProfileQuery::Transform { shape: in_shape, src: prev, dst: l })?;
            }
            if let Some(nl) = next.filter(|&nl| nl != l) {
                t += cost(&ProfileQuery::Transform { shape: out_shape, src: l, dst: nl })?;
            }
            Ok(t)
        };
        let current = out.layers[i].layout.unwrap();
        let alt = if current == Layout::Chwn { Layout::Nchw } else { Layout::Chwn };
        if total(alt)? < total(current)? {
            out.layers[i].layout = Some(alt);
        }
    }
    Ok(out)
}

/// Layout of the activation entering layer `i`.
fn producer_layout(spec: &NetworkSpec, i: usize) -> Layout {
    spec.layers[..i]
        .iter()
        .rev()
        .find_map(|l| l.layout)
        .or(spec.input_layout)
        .unwrap_or_else(|| spec.layers[i].layout.unwrap_or(Layout::Nchw))
}

/// Layout the layer after `i` needs, if it cares.
fn consumer_layout(spec: &NetworkSpec, i: usize) -> Option<Layout> {
    let next = spec.layers.get(i + 1)?;
    match next.kind() {
        LayerKind::Convolution | LayerKind::Pooling => next.layout,
        LayerKind::Softmax => Some(Layout::Nchw),
        _ => None,
    }
}

/// Wall-clock refinement on seeded data (one timed run per query after a warm-up).
pub fn profile_refine(spec: &NetworkSpec, seed: u64) -> Result<NetworkSpec> {
    let net = Network::<f32>::seeded(spec.clone(), seed);
    profile_refine_with(spec, |q| {
        let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
            f()?;
            let t0 = Instant::now();
            f()?;
            Ok(t0.elapsed().as_secs_f64())
        };
        match *q {
            ProfileQuery::Conv { layer, layout } => {
                let Dims::Map(s) = spec.dims[layer] else {
                    return Ok(0.0);
                };
                let Weights::Conv(f) = &net.weights[layer] else {
                    return Ok(0.0);
                };
                let Geometry::Conv { stride, pad, .. } = spec.layers[layer].geometry else {
                    return Ok(0.0);
                };
                let p = ConvParams::new(stride, pad)?;
                let x = uniform_tensor::<f32>(s, layout, seed);
                time(&mut || {
                    let y = match layout {
                        Layout::Chwn => conv_direct(&x, f, p)?,
                        _ => conv_gemm(&x, f, p)?,
                    };
                    std::hint::black_box(y);
                    Ok(())
                })
            }
            ProfileQuery::Transform { shape, src, dst } => {
                let x = uniform_tensor::<f32>(shape, src, seed);
                let plan = make_plan(src, dst, shape);
                time(&mut || {
                    std::hint::black_box(transform_tiled(&x, dst, &plan)?);
                    Ok(())
                })
            }
        }
    })
}
