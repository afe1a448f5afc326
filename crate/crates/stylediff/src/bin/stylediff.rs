//! Command-line surface for the style-difference font generator.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stylediff::experiments::sweep::{self, SweepAxis};
use stylediff::experiments::{self, viz};
use stylediff::{io, raster, weights};
use stylediff_core::backend::{BackendConfig, BackendKind, Pooling, VggVariant};
use stylediff_core::loss::NstWeights;
use stylediff_core::transfer::{
    InitMode, OptimizerKind, TracePoint, TransferConfig, TransferMode, TransferSession,
};

#[derive(Parser)]
#[command(
    name = "stylediff",
    version,
    about = "Generate fonts by transferring the style difference between two font images onto a third",
    after_help = "Weight files: set STYLEDIFF_VGG_WEIGHTS to a safetensors file or \
                  STYLEDIFF_CACHE_DIR to a directory holding vgg19.safetensors / \
                  vgg16.safetensors (defaults to ~/.cache/stylediff). Without one, \
                  VGG backends run with a seeded random initialization."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Vgg,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Vgg19,
    Vgg16,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Max,
    Avg,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Content,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Lbfgs,
    FirstOrder,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Content,
    Style,
}

/// Flags shared by the compute subcommands.
#[derive(Args)]
struct EngineArgs {
    /// Square size every input is resampled to, in pixels
    #[arg(long, default_value_t = 256)]
    size: usize,

    /// Optimization steps (default matches the 1000-step protocol)
    #[arg(long, default_value_t = 1000)]
    iterations: usize,

    /// Generated-image initialization
    #[arg(long, value_enum, default_value_t = InitArg::Content)]
    init: InitArg,

    /// Optimizer for the pixel variable
    #[arg(long, value_enum, default_value_t = OptimizerArg::Lbfgs)]
    optimizer: OptimizerArg,

    /// Style layers, comma separated; entries may carry explicit
    /// weights as name=weight. Default: conv1_2,conv2_2,conv3_2,
    /// conv4_2,conv5_2 with weights 1e3/N^2 (tiny: conv1,conv2,conv3)
    #[arg(long, value_delimiter = ',')]
    style_layers: Vec<String>,

    /// Content layers, same syntax. Default: conv4_2 at weight 1e4
    /// (tiny: conv2)
    #[arg(long, value_delimiter = ',')]
    content_layers: Vec<String>,

    /// Feature backend; `tiny` needs no weight files
    #[arg(long, value_enum, default_value_t = BackendArg::Vgg)]
    backend: BackendArg,

    /// VGG depth variant
    #[arg(long, value_enum, default_value_t = VariantArg::Vgg19)]
    vgg_variant: VariantArg,

    /// Pooling between blocks
    #[arg(long, value_enum, default_value_t = PoolingArg::Max)]
    pooling: PoolingArg,

    /// RNG seed (weights fallback, random init)
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write iter_<N>.png every N accepted iterations (0 = never)
    #[arg(long, default_value_t = 0)]
    snapshot_every: usize,

    /// Explicit pretrained weights file (safetensors)
    #[arg(long)]
    weights_file: Option<PathBuf>,

    /// Require the weights file to match this SHA-256
    #[arg(long)]
    expected_sha256: Option<String>,
}

impl EngineArgs {
    fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            kind: match self.backend {
                BackendArg::Vgg => BackendKind::Vgg,
                BackendArg::Tiny => BackendKind::Tiny,
            },
            variant: match self.vgg_variant {
                VariantArg::Vgg19 => VggVariant::Vgg19,
                VariantArg::Vgg16 => VggVariant::Vgg16,
            },
            pooling: match self.pooling {
                PoolingArg::Max => Pooling::Max,
                PoolingArg::Avg => Pooling::Avg,
            },
            seed: self.seed,
        }
    }

    fn transfer_config(&self, mode: TransferMode, nst: NstWeights) -> stylediff::Result<TransferConfig> {
        let backend = self.backend_config();
        let mut cfg = match backend.kind {
            BackendKind::Tiny => TransferConfig::tiny(self.seed),
            BackendKind::Vgg => TransferConfig::default(),
        };
        cfg.backend = backend;
        cfg.mode = mode;
        cfg.nst_weights = nst;
        cfg.iterations = self.iterations;
        cfg.seed = self.seed;
        cfg.snapshot_every = self.snapshot_every;
        cfg.init = match self.init {
            InitArg::Content => InitMode::Content,
            InitArg::Random => InitMode::Random,
        };
        cfg.optimizer = match self.optimizer {
            OptimizerArg::Lbfgs => OptimizerKind::Lbfgs,
            OptimizerArg::FirstOrder => OptimizerKind::FirstOrder,
        };
        if !self.style_layers.is_empty() {
            let (layers, weights) = parse_layer_list(&self.style_layers)?;
            cfg.style_layers = layers;
            cfg.style_weights = weights;
        }
        if !self.content_layers.is_empty() {
            let (layers, weights) = parse_layer_list(&self.content_layers)?;
            cfg.content_layers = layers;
            cfg.content_weights = weights;
        }
        Ok(cfg)
    }

    fn build_session(
        &self,
        mode: TransferMode,
        nst: NstWeights,
    ) -> stylediff::Result<(TransferSession<f32>, String)> {
        let cfg = self.transfer_config(mode, nst)?;
        let (pretrained, note) = weights::weights_for_backend(
            &cfg.backend,
            self.weights_file.as_deref(),
            self.expected_sha256.as_deref(),
        )?;
        let session = TransferSession::new(cfg, pretrained)?;
        Ok((session, note))
    }
}

fn parse_layer_list(
    entries: &[String],
) -> stylediff::Result<(Vec<String>, BTreeMap<String, f64>)> {
    let mut layers = Vec::new();
    let mut weights = BTreeMap::new();
    for e in entries {
        match e.split_once('=') {
            Some((name, w)) => {
                let w: f64 = w.parse().map_err(|_| {
                    stylediff_core::Error::invalid(format!("bad layer weight in {e:?}"))
                })?;
                layers.push(name.to_string());
                weights.insert(name.to_string(), w);
            }
            None => layers.push(e.clone()),
        }
    }
    Ok((layers, weights))
}

#[derive(Subcommand)]
enum Command {
    /// Transfer the style difference between two font images onto a
    /// content image
    Transfer {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style1: PathBuf,
        #[arg(long)]
        style2: PathBuf,
        /// Run directory for the artifact set
        #[arg(long, default_value = "runs/transfer")]
        out: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },

    /// Classic single-style transfer (comparison mode)
    Nst {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        /// Content term weight
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Style term weight
        #[arg(long, default_value_t = 1e3)]
        beta: f64,
        #[arg(long, default_value = "runs/nst")]
        out: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },

    /// Render one glyph to a PNG page
    Rasterize {
        /// TrueType/OpenType font file
        #[arg(long)]
        font: PathBuf,
        /// The character to render (exactly one)
        #[arg(long = "char")]
        glyph: String,
        /// Canvas size in pixels
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Margin fraction kept clear of ink
        #[arg(long, default_value_t = 0.15)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Red/blue ink difference between two glyph pages
    DiffViz {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Binarization threshold
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Re-run an experiment with the content or style layer swept
    /// across the backend's default layer set
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Override the per-cell iteration count
        #[arg(long)]
        iterations: Option<usize>,
        /// Worker processes for the cells
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },

    /// Run one experiment spec file
    RunSpec {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn print_trace_ends(trace: &[TracePoint]) {
    if let Some(first) = trace.first() {
        println!(
            "iteration {}: content={:.6e} style={:.6e} total={:.6e}",
            first.iteration, first.content_term, first.style_term, first.total
        );
    }
    if trace.len() > 1 {
        let last = trace.last().unwrap();
        println!(
            "iteration {}: content={:.6e} style={:.6e} total={:.6e}",
            last.iteration, last.content_term, last.style_term, last.total
        );
    }
}

fn cmd_transfer(
    content: &PathBuf,
    style1: &PathBuf,
    style2: &PathBuf,
    out: &PathBuf,
    engine: &EngineArgs,
) -> stylediff::Result<()> {
    let (session, note) = engine.build_session(TransferMode::Difference, NstWeights::default())?;
    eprintln!("backend: {note}");
    let c = io::load_image::<f32>(content, engine.size, true)?;
    let s1 = io::load_image::<f32>(style1, engine.size, true)?;
    let s2 = io::load_image::<f32>(style2, engine.size, true)?;
    let result = session.run_transfer(&c, &s1, &s2)?;
    print_trace_ends(&result.loss_trace);
    experiments::write_run_artifacts(
        out,
        "transfer",
        &session,
        &result,
        &c,
        &s1,
        &s2,
        note,
        [
            format!("image {}", content.display()),
            format!("image {}", style1.display()),
            format!("image {}", style2.display()),
        ],
    )?;
    println!("run directory: {}", out.display());
    Ok(())
}

fn cmd_nst(
    content: &PathBuf,
    style: &PathBuf,
    alpha: f64,
    beta: f64,
    out: &PathBuf,
    engine: &EngineArgs,
) -> stylediff::Result<()> {
    let nst = NstWeights { alpha, beta };
    NstWeights::new(alpha, beta).map_err(stylediff::Error::from)?;
    let (session, note) = engine.build_session(TransferMode::ClassicNst, nst)?;
    eprintln!("backend: {note}");
    let c = io::load_image::<f32>(content, engine.size, true)?;
    let s = io::load_image::<f32>(style, engine.size, true)?;
    let result = session.run_nst(&c, &s)?;
    print_trace_ends(&result.loss_trace);
    std::fs::create_dir_all(out)?;
    io::save_image(&result.generated, out.join("generated.png"))?;
    experiments::write_trace(&out.join("loss_trace.csv"), &result.loss_trace)?;
    for (iter, snap) in &result.snapshots {
        io::save_image(snap, out.join(format!("iter_{iter}.png")))?;
    }
    println!("run directory: {}", out.display());
    Ok(())
}

fn cmd_rasterize(
    font: &PathBuf,
    glyph: &str,
    size: usize,
    margin: f64,
    out: &PathBuf,
) -> stylediff::Result<()> {
    let mut chars = glyph.chars();
    let (c, rest) = (chars.next(), chars.next());
    let c = match (c, rest) {
        (Some(c), None) => c,
        _ => {
            return Err(stylediff_core::Error::invalid(format!(
                "--char must be exactly one character, got {glyph:?}"
            ))
            .into())
        }
    };
    let spec = raster::GlyphSpec::new(font.clone(), c)
        .with_canvas(size)
        .with_margin(margin);
    let img = raster::rasterize_glyph::<f32>(&spec)?;
    io::save_image(&img, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_diff_viz(
    a: &PathBuf,
    b: &PathBuf,
    threshold: f64,
    out: &PathBuf,
) -> stylediff::Result<()> {
    let ia = io::load_image_native::<f32>(a, true)?;
    let ib = io::load_image_native::<f32>(b, true)?;
    let v = viz::diff_visualization(&ia, &ib, threshold)?;
    let counts = viz::diff_counts(&v);
    io::save_image(&v, out)?;
    println!(
        "red={} blue={} black={} white={}",
        counts.red, counts.blue, counts.black, counts.white
    );
    Ok(())
}

fn cmd_sweep(
    spec_path: &PathBuf,
    axis: AxisArg,
    iterations: Option<usize>,
    jobs: usize,
) -> stylediff::Result<()> {
    let axis = match axis {
        AxisArg::Content => SweepAxis::ContentLayer,
        AxisArg::Style => SweepAxis::StyleLayer,
    };
    let base = experiments::ExperimentSpec::load(spec_path)?;
    let summary = if jobs <= 1 {
        sweep::layer_sweep(&base, axis, iterations)?
    } else {
        sweep_with_workers(&base, axis, iterations, jobs)?
    };
    for cell in &summary.cells {
        println!(
            "cell {}: {} ({})",
            cell.layer,
            if cell.ok { "ok" } else { "FAILED" },
            cell.message
        );
    }
    println!(
        "completed {}/{} cells; gallery: {}",
        summary.completed(),
        summary.cells.len(),
        summary.dir.display()
    );
    if summary.completed() == summary.cells.len() {
        Ok(())
    } else {
        Err(stylediff::Error::Font(format!(
            "{} sweep cell(s) failed",
            summary.cells.len() - summary.completed()
        )))
    }
}

/// Farm sweep cells out to `jobs` copies of this binary running
/// `run-spec`, each writing its own private run directory.
fn sweep_with_workers(
    base: &experiments::ExperimentSpec,
    axis: SweepAxis,
    iterations: Option<usize>,
    jobs: usize,
) -> stylediff::Result<sweep::SweepSummary> {
    let gallery = base.output.dir.clone();
    std::fs::create_dir_all(&gallery)?;
    let cells = sweep::prepare_sweep(base, axis, iterations);
    let spec_paths = sweep::write_cell_specs(&gallery, &cells)?;
    let exe = std::env::current_exe()?;
    let mut outcomes: Vec<Option<sweep::CellOutcome>> = vec![None; cells.len()];
    let mut queue: Vec<usize> = (0..cells.len()).collect();
    let mut running: Vec<(usize, std::process::Child)> = Vec::new();
    while !queue.is_empty() || !running.is_empty() {
        while running.len() < jobs && !queue.is_empty() {
            let idx = queue.remove(0);
            if cells[idx].spec.output.dir.join("manifest.json").exists() {
                outcomes[idx] = Some(sweep::CellOutcome {
                    layer: cells[idx].layer.clone(),
                    dir: cells[idx].spec.output.dir.clone(),
                    ok: true,
                    message: "already complete".into(),
                });
                continue;
            }
            let child = std::process::Command::new(&exe)
                .arg("run-spec")
                .arg("--spec")
                .arg(&spec_paths[idx])
                .spawn()?;
            running.push((idx, child));
        }
        if let Some((idx, mut child)) = running.pop() {
            let status = child.wait()?;
            outcomes[idx] = Some(sweep::CellOutcome {
                layer: cells[idx].layer.clone(),
                dir: cells[idx].spec.output.dir.clone(),
                ok: status.success(),
                message: if status.success() {
                    "ok".into()
                } else {
                    format!("worker exited with {status}")
                },
            });
        }
    }
    let outcomes: Vec<sweep::CellOutcome> = outcomes.into_iter().flatten().collect();
    sweep::finish_sweep(&gallery, axis, outcomes)
}

fn run(cli: Cli) -> stylediff::Result<()> {
    match &cli.command {
        Command::Transfer {
            content,
            style1,
            style2,
            out,
            engine,
        } => cmd_transfer(content, style1, style2, out, engine),
        Command::Nst {
            content,
            style,
            alpha,
            beta,
            out,
            engine,
        } => cmd_nst(content, style, *alpha, *beta, out, engine),
        Command::Rasterize {
            font,
            glyph,
            size,
            margin,
            out,
        } => cmd_rasterize(font, glyph, *size, *margin, out),
        Command::DiffViz { a, b, threshold, out } => cmd_diff_viz(a, b, *threshold, out),
        Command::Sweep {
            spec,
            axis,
            iterations,
            jobs,
        } => cmd_sweep(spec, *axis, *iterations, *jobs),
        Command::RunSpec { spec } => {
            let dir = experiments::run_experiment(spec)?;
            println!("run directory: {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
