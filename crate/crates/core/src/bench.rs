//! Latency and throughput harness.
//!
//! The visual pipeline (decode, layout, encode, adapter) is wall-clocked
//! for real; the LLM stages are modeled with an affine per-token cost:
//! prefill costs `base + per_ctx * n_ctx`, and decode step `i` costs
//! `base + per_ctx * (n_ctx + i)`. TPS is total output tokens over total
//! generation time (TTFT plus all TPOT), so it includes prefill.
//!
//! The clock is injectable; tests run against a deterministic fake.

use std::cell::Cell;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{self, AdapterParams};
use crate::config::PipelineConfig;
use crate::encoder;
use crate::error::{Error, Result};
use crate::imaging;
use crate::tiling::{self, Strategy};

/// Affine model of the LLM side: seconds per token plus seconds per token
/// per context token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeCostModel {
    pub base_s: f64,
    pub per_ctx_s: f64,
}

impl DecodeCostModel {
    pub fn validate(&self) -> Result<()> {
        if self.base_s < 0.0 || self.per_ctx_s < 0.0 {
            return Err(Error::Config("cost model terms must be >= 0".into()));
        }
        Ok(())
    }
}

/// One benchmarked image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub image_id: String,
    pub n_visual_tokens: usize,
    pub n_prompt_tokens: usize,
    pub n_output_tokens: usize,
    pub ttft_s: f64,
    pub tpot_s: Vec<f64>,
}

impl BenchSample {
    /// Total generation time: prefill plus every decode step.
    pub fn total_s(&self) -> f64 {
        self.ttft_s + self.tpot_s.iter().sum::<f64>()
    }
}

/// Nearest-rank mean/median/p95 summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Echo of the settings a report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRunConfig {
    pub strategy: Strategy,
    pub n_output_tokens: usize,
    pub n_prompt_tokens: usize,
    pub cost_model: DecodeCostModel,
    pub seed: u64,
    pub fake_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: Vec<BenchSample>,
    pub ttft: LatencyStats,
    pub tpot: LatencyStats,
    /// Output tokens per second of total generation time, over all samples.
    pub tps: f64,
    pub decode_failures: usize,
    pub failed_images: Vec<String>,
    pub config: Option<BenchRunConfig>,
}

impl BenchReport {
    /// Recomputes TPS from the report's own samples; the stored value must
    /// always match.
    pub fn recompute_tps(&self) -> f64 {
        tps_of(&self.samples)
    }
}

fn tps_of(samples: &[BenchSample]) -> f64 {
    let tokens: usize = samples.iter().map(|s| s.n_output_tokens).sum();
    let time: f64 = samples.iter().map(BenchSample::total_s).sum();
    tokens as f64 / time
}

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest value.
fn percentile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank.min(sorted.len()) - 1]
}

fn stats_of(values: &mut Vec<f64>) -> LatencyStats {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    LatencyStats {
        mean,
        median: percentile_nearest_rank(values, 0.50),
        p95: percentile_nearest_rank(values, 0.95),
    }
}

/// Aggregates samples into a report: TTFT stats over samples, TPOT stats
/// over every decode step, TPS over totals. Sorting happens internally, so
/// the result does not depend on input order.
pub fn summarize(samples: &[BenchSample]) -> Result<BenchReport> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot summarize an empty sample list".into()));
    }
    for s in samples {
        if s.tpot_s.len() != s.n_output_tokens {
            return Err(Error::Domain(format!(
                "sample '{}' has {} TPOT entries for {} output tokens",
                s.image_id,
                s.tpot_s.len(),
                s.n_output_tokens
            )));
        }
        if s.ttft_s < 0.0 || s.tpot_s.iter().any(|&t| t < 0.0) {
            return Err(Error::Domain(format!("sample '{}' has negative times", s.image_id)));
        }
    }
    let mut ttfts: Vec<f64> = samples.iter().map(|s| s.ttft_s).collect();
    let mut tpots: Vec<f64> = samples.iter().flat_map(|s| s.tpot_s.iter().copied()).collect();
    if tpots.is_empty() {
        tpots.push(0.0);
    }
    let mut ordered = samples.to_vec();
    ordered.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(BenchReport {
        tps: tps_of(samples),
        ttft: stats_of(&mut ttfts),
        tpot: stats_of(&mut tpots),
        samples: ordered,
        decode_failures: 0,
        failed_images: Vec::new(),
        config: None,
    })
}

/// Injectable time source, in seconds.
pub trait Clock {
    fn now_s(&self) -> f64;
}

/// Real monotonic time.
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Deterministic clock that advances by a fixed step per reading.
/// A step of zero makes every measured duration exactly zero.
pub struct FakeClock {
    step_s: f64,
    ticks: Cell<u64>,
}

impl FakeClock {
    pub fn new(step_s: f64) -> Self {
        FakeClock {
            step_s,
            ticks: Cell::new(0),
        }
    }
}

impl Clock for FakeClock {
    fn now_s(&self) -> f64 {
        let t = self.ticks.get();
        self.ticks.set(t + 1);
        t as f64 * self.step_s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub n_output_tokens: usize,
    pub n_prompt_tokens: usize,
    pub seed: u64,
    pub fake_clock: bool,
}

/// Benchmarks the full pipeline over a list of images, one at a time (the
/// timing loop is single-threaded by design).
///
/// Per image: the decode -> plan -> encode -> adapter path is clocked and
/// becomes the encode share of TTFT; the cost model adds the prefill term
/// `base + per_ctx * n_ctx` and one simulated TPOT entry per output token.
/// Images that fail to decode are recorded and excluded from aggregates.
pub fn run_bench(
    images: &[PathBuf],
    cfg: &PipelineConfig,
    opts: &BenchOptions,
    clock: &dyn Clock,
) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::Domain("bench needs at least one image".into()));
    }
    cfg.validate()?;
    let cost = cfg.cost_model;
    let vit_params = encoder::init_vit(&cfg.vit);
    let adapter_params = AdapterParams::init(&cfg.adapter);

    let mut samples = Vec::with_capacity(images.len());
    let mut failed = Vec::new();
    for path in images {
        let image_id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let t0 = clock.now_s();
        let img = match imaging::decode_image(path) {
            Ok(img) => img,
            Err(_) => {
                failed.push(image_id);
                continue;
            }
        };
        let layout = tiling::plan(cfg.strategy, img.width(), img.height(), &cfg.tiling)?;
        let features = encoder::encode_layout(&img, &layout, &vit_params, &cfg.tiling)?;
        let llm_tokens = adapter::adapter_forward(&features, &adapter_params, &cfg.adapter)?;
        let encode_s = clock.now_s() - t0;

        let n_visual = llm_tokens.num_tokens();
        debug_assert_eq!(n_visual, tiling::count_llm_tokens(&layout, &cfg.tiling));
        let n_ctx = opts.n_prompt_tokens + n_visual;
        let ttft_s = encode_s + cost.base_s + cost.per_ctx_s * n_ctx as f64;
        let tpot_s = (0..opts.n_output_tokens)
            .map(|i| cost.base_s + cost.per_ctx_s * (n_ctx + i) as f64)
            .collect();
        samples.push(BenchSample {
            image_id,
            n_visual_tokens: n_visual,
            n_prompt_tokens: opts.n_prompt_tokens,
            n_output_tokens: opts.n_output_tokens,
            ttft_s,
            tpot_s,
        });
    }
    if samples.is_empty() {
        return Err(Error::Domain("every image failed to decode".into()));
    }
    let mut report = summarize(&samples)?;
    report.decode_failures = failed.len();
    report.failed_images = failed;
    report.config = Some(BenchRunConfig {
        strategy: cfg.strategy,
        n_output_tokens: opts.n_output_tokens,
        n_prompt_tokens: opts.n_prompt_tokens,
        cost_model: cost,
        seed: opts.seed,
        fake_clock: opts.fake_clock,
    });
    Ok(report)
}

/// A throughput/accuracy point for Pareto analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub tps: f64,
    pub accuracy: f64,
}

impl ParetoPoint {
    pub fn new(tps: f64, accuracy: f64) -> Result<Self> {
        if !tps.is_finite() || !accuracy.is_finite() || !(0.0..=100.0).contains(&accuracy) {
            return Err(Error::Domain(format!(
                "invalid Pareto point ({tps}, {accuracy})"
            )));
        }
        Ok(ParetoPoint { tps, accuracy })
    }

    fn dominates(&self, other: &ParetoPoint) -> bool {
        self.tps >= other.tps
            && self.accuracy >= other.accuracy
            && (self.tps > other.tps || self.accuracy > other.accuracy)
    }
}

/// Indices of the non-dominated points, sorted by descending TPS.
/// Exact duplicates keep only their first occurrence.
pub fn pareto_front_indices(points: &[ParetoPoint]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if i != j && q.dominates(p) {
                continue 'outer;
            }
            // de-dup rule: an identical earlier point wins
            if j < i && q == p {
                continue 'outer;
            }
        }
        front.push(i);
    }
    front.sort_by(|&a, &b| {
        points[b]
            .tps
            .partial_cmp(&points[a].tps)
            .expect("finite tps")
    });
    front
}

/// The maximal set under dominance, sorted by descending TPS.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    pareto_front_indices(points)
        .into_iter()
        .map(|i| points[i])
        .collect()
}
