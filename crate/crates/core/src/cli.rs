//! The `flashtok` command-line tool: tile planning, token budgets, feature
//! encoding, latency benchmarks, LR schedules and Pareto analysis.
//!
//! Configuration precedence: named preset, then `--config` JSON, then
//! individual flags (`--strategy`, `--seed`). Exit codes: 0 success,
//! 1 runtime failure, 2 usage or config error. `FLASHTOK_THREADS` caps
//! worker parallelism for per-tile encoding.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adapter::{self, AdapterParams};
use crate::bench::{self, BenchOptions, FakeClock, ParetoPoint, WallClock};
use crate::config::PipelineConfig;
use crate::encoder;
use crate::error::{Error, Result};
use crate::fvtk;
use crate::imaging;
use crate::schedule;
use crate::tiling::{self, Strategy, TileLayout};

#[derive(Debug, Parser)]
#[command(
    name = "flashtok",
    version,
    about = "Tile planning, visual-token budgeting, encoding and latency analysis for VLM front-ends"
)]
pub struct Cli {
    /// Seed for parameter initialization; echoed in output artifacts.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Pipeline config JSON (overrides the preset; flags win over both).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset: static-siglip2like, dynamic-aimv2like, iss-aimv2like.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Static,
    Dynamic,
    Overlap,
    Iss,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Strategy {
        match value {
            StrategyArg::Static => Strategy::Static,
            StrategyArg::Dynamic => Strategy::DynamicCrop,
            StrategyArg::Overlap => Strategy::OverlapCrop,
            StrategyArg::Iss => Strategy::Iss,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a tile layout for an image and write it as JSON.
    Tile {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render a text diagram of tiles and retained regions.
        #[arg(long)]
        ascii: bool,
    },
    /// Print encoder-token and LLM-token counts for an image size.
    Tokens {
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// CSV of sizes (header "width,height"); emits one row per size.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Run the visual pipeline on an image and dump features (FVTK).
    Encode {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        out: PathBuf,
        /// Apply the adapter before dumping (compressed LLM tokens).
        #[arg(long)]
        apply_adapter: bool,
    },
    /// Benchmark TTFT/TPOT/TPS over a directory of images.
    Bench {
        #[arg(long)]
        images: PathBuf,
        /// Output tokens simulated per image.
        #[arg(long, default_value_t = 128)]
        n_out: usize,
        /// Text prompt tokens counted into the context.
        #[arg(long, default_value_t = 0)]
        n_prompt: usize,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Deterministic zero-step clock; reports become bit-reproducible.
        #[arg(long)]
        fake_clock: bool,
        /// Report JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-sample CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Emit a step,lr CSV for one training stage.
    Schedule {
        /// Stage number, 1-5.
        #[arg(long)]
        stage: u8,
        /// Global batch size used to derive total steps.
        #[arg(long)]
        batch: u64,
        /// Override the stage's sample count.
        #[arg(long)]
        samples: Option<u64>,
        /// Emit every n-th step (warmup boundary and endpoints always kept).
        #[arg(long, default_value_t = 1)]
        stride: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read a "name,tps,accuracy" CSV and print the Pareto front.
    Pareto {
        #[arg(long)]
        points: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_main() -> i32 {
    let cli = Cli::parse();
    init_thread_pool();
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("FLASHTOK_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid FLASHTOK_THREADS={value}"),
        }
    }
}

fn resolve_config(cli: &Cli, strategy: Option<StrategyArg>) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => PipelineConfig::from_json_file(path)?,
        (None, Some(name)) => PipelineConfig::preset(name)?,
        (None, None) => PipelineConfig::preset("iss-aimv2like")?,
    };
    if let Some(s) = strategy {
        cfg.strategy = s.into();
    }
    cfg.vit.seed = cli.seed;
    cfg.adapter.seed = cli.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tile {
            ref image,
            strategy,
            ref out,
            ascii,
        } => cmd_tile(&cli, image, strategy, out.as_deref(), ascii),
        Command::Tokens {
            width,
            height,
            strategy,
            ref sweep,
        } => cmd_tokens(&cli, width, height, strategy, sweep.as_deref()),
        Command::Encode {
            ref image,
            strategy,
            ref out,
            apply_adapter,
        } => cmd_encode(&cli, image, strategy, out, apply_adapter),
        Command::Bench {
            ref images,
            n_out,
            n_prompt,
            strategy,
            fake_clock,
            ref out,
            ref csv,
        } => cmd_bench(&cli, images, n_out, n_prompt, strategy, fake_clock, out.as_deref(), csv.as_deref()),
        Command::Schedule {
            stage,
            batch,
            samples,
            stride,
            ref out,
        } => cmd_schedule(stage, batch, samples, stride, out.as_deref()),
        Command::Pareto { ref points } => cmd_pareto(points),
    }
}

/// Layout JSON with the run seed attached for provenance.
#[derive(Serialize)]
struct LayoutDoc<'a> {
    #[serde(flatten)]
    layout: &'a TileLayout,
    seed: u64,
}

fn cmd_tile(
    cli: &Cli,
    image: &Path,
    strategy: Option<StrategyArg>,
    out: Option<&Path>,
    ascii: bool,
) -> Result<()> {
    let cfg = resolve_config(cli, strategy)?;
    let img = imaging::decode_image(image)?;
    let layout = tiling::plan(cfg.strategy, img.width(), img.height(), &cfg.tiling)?;
    let doc = LayoutDoc {
        layout: &layout,
        seed: cli.seed,
    };
    let json = serde_json::to_string_pretty(&doc).expect("layout serializes");
    match out {
        Some(path) => fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    if ascii {
        println!("{}", render_ascii(&layout));
    }
    Ok(())
}

/// One character per patch cell of the padded area: '.' frame, digits for
/// the tile retaining that cell, '+' where several tiles retain it
/// (overlap strategy), 'x' for discarded content cells.
fn render_ascii(layout: &TileLayout) -> String {
    let p = layout.patch_size;
    let rows = layout.padded_h() / p;
    let cols = layout.padded_w() / p;
    let margin = layout.frame_margin / p;
    let content_rows = layout.content_h / p;
    let content_cols = layout.content_w / p;

    let mut owners = vec![Vec::new(); rows * cols];
    for (idx, t) in layout.tiles.iter().enumerate() {
        let (tx, ty) = (t.x / p, t.y / p);
        let (tw, th) = (t.w / p, t.h / p);
        for r in ty + t.retain.t..ty + th - t.retain.b {
            for c in tx + t.retain.l..tx + tw - t.retain.r {
                owners[r * cols + c].push(idx);
            }
        }
    }
    const DIGITS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut text = String::with_capacity(rows * (cols + 1) + 128);
    text.push_str(&format!(
        "{} {}x{} tiles, content {}x{} px, frame {} px ({} patch cells/edge)\n",
        layout.strategy,
        layout.grid_rows,
        layout.grid_cols,
        layout.content_w,
        layout.content_h,
        layout.frame_margin,
        margin
    ));
    for r in 0..rows {
        for c in 0..cols {
            let in_content = r >= margin
                && r < margin + content_rows
                && c >= margin
                && c < margin + content_cols;
            let cell = &owners[r * cols + c];
            let ch = match (in_content, cell.len()) {
                (false, _) => '.',
                (true, 0) => 'x',
                (true, 1) => DIGITS[cell[0] % DIGITS.len()] as char,
                (true, _) => '+',
            };
            text.push(ch);
        }
        text.push('\n');
    }
    text
}

fn cmd_tokens(
    cli: &Cli,
    width: Option<usize>,
    height: Option<usize>,
    strategy: Option<StrategyArg>,
    sweep: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(cli, strategy)?;
    if let Some(path) = sweep {
        let sizes = read_sizes_csv(path)?;
        println!("width,height,grid_rows,grid_cols,vit_tokens,llm_tokens");
        for (w, h) in sizes {
            let layout = tiling::plan(cfg.strategy, w, h, &cfg.tiling)?;
            println!(
                "{w},{h},{},{},{},{}",
                layout.grid_rows,
                layout.grid_cols,
                tiling::count_vit_tokens(&layout),
                tiling::count_llm_tokens(&layout, &cfg.tiling)
            );
        }
        return Ok(());
    }
    let (w, h) = match (width, height) {
        (Some(w), Some(h)) if w >= 1 && h >= 1 => (w, h),
        _ => {
            return Err(Error::Config(
                "tokens needs --width and --height (>= 1), or --sweep".into(),
            ))
        }
    };
    let layout = tiling::plan(cfg.strategy, w, h, &cfg.tiling)?;
    println!(
        "vit={} llm={}",
        tiling::count_vit_tokens(&layout),
        tiling::count_llm_tokens(&layout, &cfg.tiling)
    );
    Ok(())
}

fn read_sizes_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["width", "height"] {
        return Err(Error::parse(path, "expected header 'width,height'"));
    }
    let mut sizes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let parse = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::parse(path, format!("bad size row: {record:?}")))
        };
        sizes.push((parse(0)?, parse(1)?));
    }
    if sizes.is_empty() {
        return Err(Error::parse(path, "no sizes in sweep file"));
    }
    Ok(sizes)
}

fn cmd_encode(
    cli: &Cli,
    image: &Path,
    strategy: Option<StrategyArg>,
    out: &Path,
    apply_adapter: bool,
) -> Result<()> {
    let cfg = resolve_config(cli, strategy)?;
    let img = imaging::decode_image(image)?;
    let layout = tiling::plan(cfg.strategy, img.width(), img.height(), &cfg.tiling)?;
    let params = encoder::init_vit(&cfg.vit);
    let mut grid = encoder::encode_layout(&img, &layout, &params, &cfg.tiling)?;
    if apply_adapter {
        let adapter_params = AdapterParams::init(&cfg.adapter);
        grid = adapter::adapter_forward(&grid, &adapter_params, &cfg.adapter)?;
    }
    fvtk::write_grid(&grid, out)?;
    println!(
        "wrote {}: {}x{}x{} tokens (strategy {}, seed {})",
        out.display(),
        grid.rows(),
        grid.cols(),
        grid.dim(),
        cfg.strategy,
        cli.seed
    );
    Ok(())
}

fn collect_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("ppm" | "png" | "jpg" | "jpeg")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    cli: &Cli,
    images_dir: &Path,
    n_out: usize,
    n_prompt: usize,
    strategy: Option<StrategyArg>,
    fake_clock: bool,
    out: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(cli, strategy)?;
    let images = collect_images(images_dir)?;
    if images.is_empty() {
        return Err(Error::Domain(format!(
            "no .ppm/.png/.jpg images under {}",
            images_dir.display()
        )));
    }
    let opts = BenchOptions {
        n_output_tokens: n_out,
        n_prompt_tokens: n_prompt,
        seed: cli.seed,
        fake_clock,
    };
    let report = if fake_clock {
        bench::run_bench(&images, &cfg, &opts, &FakeClock::new(0.0))?
    } else {
        bench::run_bench(&images, &cfg, &opts, &WallClock::new())?
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => {
            fs::write(path, &json).map_err(|e| Error::io(path, e))?;
            println!(
                "wrote {}: {} samples, tps {:.4}, ttft mean {:.6}s (seed {})",
                path.display(),
                report.samples.len(),
                report.tps,
                report.ttft.mean,
                cli.seed
            );
        }
        None => println!("{json}"),
    }
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        w.write_record(["image_id", "n_visual_tokens", "ttft_s", "mean_tpot_s"])
            .map_err(|e| Error::parse(path, e.to_string()))?;
        for s in &report.samples {
            let mean_tpot = if s.tpot_s.is_empty() {
                0.0
            } else {
                s.tpot_s.iter().sum::<f64>() / s.tpot_s.len() as f64
            };
            w.write_record([
                s.image_id.clone(),
                s.n_visual_tokens.to_string(),
                format!("{}", s.ttft_s),
                format!("{mean_tpot}"),
            ])
            .map_err(|e| Error::parse(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_schedule(
    stage: u8,
    batch: u64,
    samples: Option<u64>,
    stride: u64,
    out: Option<&Path>,
) -> Result<()> {
    if !(1..=5).contains(&stage) {
        return Err(Error::Config(format!("stage must be 1-5, got {stage}")));
    }
    if batch < 1 {
        return Err(Error::Config("batch must be >= 1".into()));
    }
    if stride < 1 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut cfg = schedule::default_stages(batch)
        .into_iter()
        .find(|s| s.stage_id == stage)
        .expect("stage in range");
    if let Some(n) = samples {
        cfg.data_samples = n;
        cfg.total_steps = n.div_ceil(batch);
    }
    cfg.validate()?;

    let mut text = String::from("step,lr\n");
    for step in 0..=cfg.total_steps {
        let keep = step % stride == 0 || step == cfg.warmup_steps || step == cfg.total_steps;
        if keep {
            text.push_str(&format!("{step},{:e}\n", schedule::lr_at(step, &cfg)?));
        }
    }
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
            println!(
                "wrote {}: stage {stage}, batch {batch}, {} steps",
                path.display(),
                cfg.total_steps
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_pareto(points_path: &Path) -> Result<()> {
    let mut reader =
        csv::Reader::from_path(points_path).map_err(|e| Error::parse(points_path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(points_path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["name", "tps", "accuracy"] {
        return Err(Error::parse(points_path, "expected header 'name,tps,accuracy'"));
    }
    let mut names = Vec::new();
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(points_path, e.to_string()))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::parse(points_path, format!("short row: {record:?}")))
        };
        let name = field(0)?.to_string();
        let tps: f64 = field(1)?
            .trim()
            .parse()
            .map_err(|_| Error::parse(points_path, format!("bad tps in row for '{name}'")))?;
        let accuracy: f64 = field(2)?
            .trim()
            .parse()
            .map_err(|_| Error::parse(points_path, format!("bad accuracy in row for '{name}'")))?;
        names.push(name);
        points.push(ParetoPoint::new(tps, accuracy)?);
    }
    if points.is_empty() {
        return Err(Error::parse(points_path, "no points in file"));
    }
    let front = bench::pareto_front_indices(&points);
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "name,tps,accuracy").expect("stdout");
    for i in front {
        writeln!(w, "{},{},{}", names[i], points[i].tps, points[i].accuracy).expect("stdout");
    }
    Ok(())
}
