//! Command-line surface. [`execute`] returns the CSV text the command
//! produced; the binary decides where it goes.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use cnnlayout::net::{annotate_layouts, parse_network, profile_refine, run_network, Network, RunOptions};
use cnnlayout::select::{calibrate_on, host_bench, CalibrationGrid, CalibrationRecord, ConvBench, HeuristicThresholds};
use cnnlayout::{Layout, Shape};

use crate::bench::{bench_layer, bench_transform, layer_csv, transform_csv, BenchOptions};
use crate::error::CliError;
use crate::fixtures::{conv_fixtures, fixture, Fixture, DEFAULT_SCALE, FIXTURES};

#[derive(Debug, Parser)]
#[command(name = "cnnlayout", version, about = "Layout-aware CNN layer benchmarks and network runner")]
pub struct Cli {
    /// Write CSV output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run all parallel kernels on a single worker thread.
    #[arg(long, global = true)]
    pub serial: bool,
    /// Seed for generated inputs and weights.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Divisor for batch sizes (and H/W cap of 64 when > 1).
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    /// Timed repetitions per row (median reported).
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time one fixture (or all) under each layout and algorithm.
    BenchLayer {
        /// Fixture id such as CV7, PL3 or CLASS3.
        #[arg(long, conflicts_with = "all")]
        id: Option<String>,
        /// Benchmark every fixture.
        #[arg(long)]
        all: bool,
        /// Restrict to one layout (chwn or nchw).
        #[arg(long)]
        layout: Option<String>,
        /// Restrict to one algorithm: direct, gemm, fft, plain, coarsened, reference, fused.
        #[arg(long)]
        algorithm: Option<String>,
        /// Add a hill-climbed coarsening row for pooling fixtures.
        #[arg(long)]
        autotune: bool,
    },
    /// Time NCHW to CHWN transforms: naive, tiled and tiled with paired copies.
    BenchTransform {
        /// Use a fixture's input dims.
        #[arg(long, conflicts_with = "dims")]
        id: Option<String>,
        /// Explicit dims as NxCxHxW.
        #[arg(long)]
        dims: Option<String>,
    },
    /// Measure the layout crossover on this machine and save the thresholds.
    Calibrate {
        /// Sweep a denser grid.
        #[arg(long)]
        fine: bool,
        /// Calibration record path.
        #[arg(long, default_value = "calibration.txt")]
        save: PathBuf,
    },
    /// Run a network config and report per-layer timings.
    RunNet {
        config: PathBuf,
        /// Annotate layouts with the thresholds from the calibration file.
        #[arg(long, conflicts_with = "preset")]
        auto_layout: bool,
        /// Annotate layouts with named thresholds: titan-black or titan-x.
        #[arg(long)]
        preset: Option<String>,
        /// Calibration record used by --auto-layout.
        #[arg(long, default_value = "calibration.txt")]
        calibration: PathBuf,
        /// Time each conv layer under both layouts and keep the faster.
        #[arg(long)]
        profile_refine: bool,
        /// Use FFT convolution for stride-1 NCHW layers.
        #[arg(long)]
        fft: bool,
    },
    /// Show the fixture table.
    Fixtures {
        #[arg(long)]
        list: bool,
    },
}

/// Output of one command: CSV for the output sink and a human summary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub csv: String,
    pub summary: String,
}

fn lookup(id: &str) -> Result<Fixture, CliError> {
    fixture(id).ok_or_else(|| CliError::Usage(format!("unknown fixture '{id}' (see `fixtures --list`)")))
}

fn algorithm_label(name: &str) -> Result<&'static str, CliError> {
    const LABELS: [&str; 7] = ["direct", "gemm", "fft", "plain", "coarsened", "reference", "fused"];
    LABELS
        .iter()
        .copied()
        .find(|l| l.eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::Usage(format!("unknown algorithm '{name}' (expected one of {})", LABELS.join(", "))))
}

fn parse_dims(text: &str) -> Result<Shape, CliError> {
    let parts: Vec<usize> = text
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("dims '{text}' must be NxCxHxW")))?;
    match parts[..] {
        [n, c, h, w] => Ok(Shape::new(n, c, h, w)?),
        _ => Err(CliError::Usage(format!("dims '{text}' must have four extents"))),
    }
}

pub fn execute(cli: &Cli) -> Result<Output, CliError> {
    let repeats = cli.repeats.unwrap_or(5).max(1);
    match &cli.command {
        Command::BenchLayer { id, all, layout, algorithm, autotune } => {
            let opts = BenchOptions {
                scale: cli.scale.unwrap_or(DEFAULT_SCALE),
                repeats,
                seed: cli.seed,
                layout: layout.as_deref().map(str::parse::<Layout>).transpose()?,
                algorithm: algorithm.as_deref().map(algorithm_label).transpose()?,
                autotune: *autotune,
            };
            let targets: Vec<Fixture> = match (id, all) {
                (Some(id), _) => vec![lookup(id)?],
                (None, true) => FIXTURES.to_vec(),
                (None, false) => return Err(CliError::Usage("bench-layer needs --id <FIXTURE> or --all".into())),
            };
            let mut rows = Vec::new();
            for f in &targets {
                rows.extend(bench_layer(f, &opts)?);
            }
            let verified = rows.iter().filter(|r| r.is_verified()).count();
            Ok(Output {
                csv: layer_csv(&rows),
                summary: format!("{} row(s), {verified} oracle-verified, scale {}", rows.len(), opts.scale),
            })
        }
        Command::BenchTransform { id, dims } => {
            let scale = cli.scale.unwrap_or(1);
            let shapes: Vec<Shape> = match (id, dims) {
                (Some(id), _) => vec![lookup(id)?.scaled(scale).input_shape()?],
                (None, Some(d)) => vec![parse_dims(d)?],
                (None, None) => conv_fixtures().map(|f| f.scaled(scale).input_shape()).collect::<Result<_, _>>()?,
            };
            let mut rows = Vec::new();
            for s in shapes {
                rows.extend(bench_transform(s, repeats, cli.seed)?);
            }
            Ok(Output {
                csv: transform_csv(&rows),
                summary: format!("{} row(s)", rows.len()),
            })
        }
        Command::Calibrate { fine, save } => {
            let scale = cli.scale.unwrap_or(DEFAULT_SCALE).max(1);
            let base = ConvBench::default();
            let bench = ConvBench {
                c_out: (base.c_out / scale).max(1),
                repeats: cli.repeats.unwrap_or(3).max(1),
                seed: cli.seed,
                ..base
            };
            let grid = if *fine { CalibrationGrid::fine() } else { CalibrationGrid::default() };
            let cal = calibrate_on(&grid, host_bench(bench))?;
            let record = CalibrationRecord::for_this_host(cal.thresholds);
            record.save(save).map_err(|e| match e {
                cnnlayout::Error::Io(source) => CliError::Write {
                    path: save.clone(),
                    source,
                },
                other => other.into(),
            })?;
            let mut csv = String::from("layout,n,c,seconds\n");
            for s in &cal.samples {
                writeln!(
                    csv,
                    "{},{},{},{:.9}",
                    s.probe.layout.name().to_ascii_lowercase(),
                    s.probe.n,
                    s.probe.c,
                    s.seconds
                )
                .unwrap();
            }
            Ok(Output {
                csv,
                summary: format!("{record} (saved to {})", save.display()),
            })
        }
        Command::RunNet {
            config,
            auto_layout,
            preset,
            calibration,
            profile_refine: refine,
            fft,
        } => {
            let text = std::fs::read_to_string(config).map_err(|source| CliError::Read {
                path: config.clone(),
                source,
            })?;
            let mut spec = parse_network(&text)?;
            let thresholds = if let Some(name) = preset {
                Some(HeuristicThresholds::preset(name).ok_or_else(|| {
                    CliError::Usage(format!("unknown preset '{name}' (expected titan-black or titan-x)"))
                })?)
            } else if *auto_layout {
                let record = CalibrationRecord::load(calibration).map_err(|e| match e {
                    cnnlayout::Error::Io(source) => CliError::Read {
                        path: calibration.clone(),
                        source,
                    },
                    other => other.into(),
                })?;
                Some(record.thresholds)
            } else {
                None
            };
            spec = match thresholds {
                Some(th) => annotate_layouts(&spec, th),
                None => {
                    // baseline: every unpinned layer runs NCHW
                    let unpinned: Vec<String> = spec
                        .layers()
                        .iter()
                        .filter(|l| l.kind().has_layout() && l.layout.is_none())
                        .map(|l| l.name.clone())
                        .collect();
                    for name in unpinned {
                        spec.set_layout(&name, Some(Layout::Nchw))?;
                    }
                    spec
                }
            };
            if *refine {
                spec = profile_refine(&spec, cli.seed)?;
            }
            let net = Network::<f32>::seeded(spec, cli.seed);
            let input = net.seeded_input(cli.seed.wrapping_add(1));
            let (out, report) = run_network(&net, &input, RunOptions { fft: *fft })?;
            let out_dims = match (out.as_map(), out.as_flat()) {
                (Some(t), _) => t.shape().to_string(),
                (_, Some(m)) => format!("{}x{}", m.rows(), m.cols()),
                _ => unreachable!(),
            };
            Ok(Output {
                csv: report.to_csv(),
                summary: format!(
                    "{} layer(s), {} transform(s), output {out_dims}, total {} ns",
                    net.spec().layers().len(),
                    report.transform_count(),
                    report.total_nanos
                ),
            })
        }
        Command::Fixtures { list } => {
            if !list {
                return Err(CliError::Usage("fixtures needs --list".into()));
            }
            let scale = cli.scale.unwrap_or(1);
            let mut csv = format!("{}\n", Fixture::CSV_HEADER);
            for f in FIXTURES {
                writeln!(csv, "{}", f.scaled(scale).csv_line()).unwrap();
            }
            Ok(Output {
                csv,
                summary: format!("{} fixtures", FIXTURES.len()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("cnnlayout").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn fixtures_list() {
        let out = execute(&parse(&["fixtures", "--list"])).unwrap();
        assert_eq!(out.csv.lines().count(), 28);
        assert!(execute(&parse(&["fixtures"])).is_err());
    }

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("64x96x55x55").unwrap(), Shape::new(64, 96, 55, 55).unwrap());
        assert!(parse_dims("64x96").is_err());
        assert!(parse_dims("axbxcxd").is_err());
        assert!(parse_dims("0x1x1x1").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        let err = execute(&parse(&["bench-layer"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = execute(&parse(&["bench-layer", "--id", "CV99"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = execute(&parse(&["bench-layer", "--id", "CV1", "--algorithm", "winograd"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = execute(&parse(&["run-net", "/nonexistent/net.json"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(Cli::try_parse_from(["cnnlayout", "bench-layer", "--bogus"]).is_err());
    }
}
