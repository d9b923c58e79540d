//! flashtok — the visual front-end of a latency-focused vision-language
//! pipeline: image tiling strategies (including implicit semantic
//! stitching), a deterministic desk-scale vision encoder, pixel-shuffle
//! token compression, token-budget accounting, LR-schedule math and a
//! TTFT/TPOT/throughput benchmark harness.
//!
//! See the `flashtok` binary (`src/cli.rs`) for the command-line surface.

pub mod adapter;
pub mod bench;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod fvtk;
pub mod imaging;
pub mod math;
pub mod schedule;
pub mod tiling;

pub use adapter::{adapter_forward, adapter_grad, param_count, pixel_shuffle, pixel_unshuffle, AdapterConfig, AdapterParams};
pub use bench::{pareto_front, run_bench, summarize, BenchReport, BenchSample, DecodeCostModel, ParetoPoint};
pub use config::PipelineConfig;
pub use encoder::{drop_overlap_tokens, encode_layout, init_vit, patchify, vit_forward, TokenGrid, VitConfig, VitParams};
pub use error::{Error, Result};
pub use imaging::{crop, decode_image, encode_ppm, pad_black_frame, resize_bilinear, ImageBuffer};
pub use schedule::{default_stages, lr_at, StageConfig};
pub use tiling::{count_llm_tokens, count_vit_tokens, plan, select_grid, Strategy, TileLayout, TileRect, TilingConfig};
