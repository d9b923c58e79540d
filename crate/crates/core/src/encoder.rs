//! Deterministic desk-scale vision transformer.
//!
//! This encoder exists to make the tiling strategies' information flow
//! observable and testable — which pixels can influence which retained
//! tokens — not to reproduce any pretrained tower. Parameters are drawn
//! from a seeded generator so every forward pass is bit-reproducible.
//!
//! Preset shapes: "siglip2-like" uses p=16, g=32 (512 px tiles);
//! "aimv2-like" uses p=14, g=32 (448 px tiles).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, ImageBuffer, CHANNELS};
use crate::math;
use crate::tiling::{TileLayout, TileRect, TilingConfig};

/// A 2-D grid of feature vectors: `rows x cols` tokens of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::Geometry(format!(
                "token data length {} does not match {rows}x{cols}x{dim}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry("token grid contains non-finite values".into()));
        }
        Ok(TokenGrid {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        TokenGrid {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols * dim);
        TokenGrid {
            rows,
            cols,
            dim,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Encoder shape and determinism knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub patch_size: usize,
    /// Patch grid edge `g`; the encoder consumes `g x g` tokens.
    pub grid_side: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_pos_emb: bool,
    /// Per-channel affine input map `v * scale + shift`, applied before
    /// patch projection. Identity by default; set to 1/std and -mean/std
    /// to emulate dataset normalization.
    #[serde(default = "default_scale")]
    pub input_scale: [f64; 3],
    #[serde(default = "default_shift")]
    pub input_shift: [f64; 3],
    pub seed: u64,
}

fn default_scale() -> [f64; 3] {
    [1.0; 3]
}

fn default_shift() -> [f64; 3] {
    [0.0; 3]
}

impl VitConfig {
    pub fn patch_dim(&self) -> usize {
        CHANNELS * self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 1 || self.grid_side < 1 || self.dim < 1 || self.heads < 1 {
            return Err(Error::Config("encoder dims must be >= 1".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        if !self.input_scale.iter().chain(&self.input_shift).all(|v| v.is_finite()) {
            return Err(Error::Config("input affine must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
}

/// Seeded encoder parameters. Weight matrices are row-major, input-major,
/// so `y = x W + b` throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct VitParams {
    cfg: VitConfig,
    pub(crate) patch_proj_w: Vec<f64>,
    pub(crate) patch_proj_b: Vec<f64>,
    pub(crate) pos_emb: Option<Vec<f64>>,
    pub(crate) blocks: Vec<BlockParams>,
    pub(crate) final_gain: Vec<f64>,
    pub(crate) final_bias: Vec<f64>,
}

impl VitParams {
    pub fn config(&self) -> &VitConfig {
        &self.cfg
    }

    /// Hash of every parameter bit; two runs with the same seed agree.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut eat = |v: &[f64]| {
            for x in v {
                x.to_bits().hash(&mut h);
            }
        };
        eat(&self.patch_proj_w);
        eat(&self.patch_proj_b);
        if let Some(pos) = &self.pos_emb {
            eat(pos);
        }
        for b in &self.blocks {
            for t in [
                &b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo,
                &b.bo, &b.ln2_gain, &b.ln2_bias, &b.mlp_w1, &b.mlp_b1, &b.mlp_w2, &b.mlp_b2,
            ] {
                eat(t);
            }
        }
        eat(&self.final_gain);
        eat(&self.final_bias);
        h.finish()
    }
}

/// Draws encoder parameters from `ChaCha8(seed)`.
///
/// Weights are sampled from `Normal(0, 1/sqrt(fan_in))` in a fixed order
/// (patch projection, positional table, then per block: q, k, v, o, MLP);
/// biases start at zero and norm gains at one. The positional table uses
/// `Normal(0, 1/sqrt(dim))`.
pub fn init_vit(cfg: &VitConfig) -> VitParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let in_dim = cfg.patch_dim();
    let hidden = cfg.mlp_hidden();
    let n = cfg.grid_side * cfg.grid_side;

    let mut draw = |fan_in: usize, len: usize| -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
        (0..len).map(|_| normal.sample(&mut rng)).collect()
    };

    let patch_proj_w = draw(in_dim, in_dim * d);
    let patch_proj_b = vec![0.0; d];
    let pos_emb = cfg.use_pos_emb.then(|| draw(d, n * d));
    let blocks = (0..cfg.depth)
        .map(|_| BlockParams {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            wq: draw(d, d * d),
            bq: vec![0.0; d],
            wk: draw(d, d * d),
            bk: vec![0.0; d],
            wv: draw(d, d * d),
            bv: vec![0.0; d],
            wo: draw(d, d * d),
            bo: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            mlp_w1: draw(d, d * hidden),
            mlp_b1: vec![0.0; hidden],
            mlp_w2: draw(hidden, hidden * d),
            mlp_b2: vec![0.0; d],
        })
        .collect();

    VitParams {
        cfg: cfg.clone(),
        patch_proj_w,
        patch_proj_b,
        pos_emb,
        blocks,
        final_gain: vec![1.0; d],
        final_bias: vec![0.0; d],
    }
}

/// Slices a tile into `p x p` patches; each token is the row-major
/// flattening of its patch (pixels interleaved RGB), so `dim = 3 p^2`.
pub fn patchify(tile: &ImageBuffer, p: usize) -> Result<TokenGrid> {
    if p == 0 || tile.width() % p != 0 || tile.height() % p != 0 {
        return Err(Error::Geometry(format!(
            "tile {}x{} not divisible by patch size {p}",
            tile.width(),
            tile.height()
        )));
    }
    let rows = tile.height() / p;
    let cols = tile.width() / p;
    let dim = CHANNELS * p * p;
    let mut data = Vec::with_capacity(rows * cols * dim);
    for tr in 0..rows {
        for tc in 0..cols {
            for py in 0..p {
                for px in 0..p {
                    for c in 0..CHANNELS {
                        data.push(tile.pixel(tc * p + px, tr * p + py, c));
                    }
                }
            }
        }
    }
    Ok(TokenGrid::from_raw(rows, cols, dim, data))
}

fn attention_block(x: &mut [f64], n: usize, cfg: &VitConfig, p: &BlockParams) {
    let d = cfg.dim;
    let heads = cfg.heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut normed = vec![0.0; n * d];
    for t in 0..n {
        math::layer_norm(
            &x[t * d..(t + 1) * d],
            &p.ln1_gain,
            &p.ln1_bias,
            &mut normed[t * d..(t + 1) * d],
        );
    }
    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    math::matmul_bias(&normed, n, d, &p.wq, &p.bq, d, &mut q);
    math::matmul_bias(&normed, n, d, &p.wk, &p.bk, d, &mut k);
    math::matmul_bias(&normed, n, d, &p.wv, &p.bv, d, &mut v);

    let mut mixed = vec![0.0; n * d];
    let mut scores = vec![0.0; n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            for (j, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for e in 0..hd {
                    acc += q[i * d + off + e] * k[j * d + off + e];
                }
                *s = acc * scale;
            }
            math::softmax_inplace(&mut scores);
            for e in 0..hd {
                let mut acc = 0.0;
                for (j, &s) in scores.iter().enumerate() {
                    acc += s * v[j * d + off + e];
                }
                mixed[i * d + off + e] = acc;
            }
        }
    }
    let mut proj = vec![0.0; n * d];
    math::matmul_bias(&mixed, n, d, &p.wo, &p.bo, d, &mut proj);
    for i in 0..n * d {
        x[i] += proj[i];
    }

    let hidden = cfg.mlp_hidden();
    for t in 0..n {
        math::layer_norm(
            &x[t * d..(t + 1) * d],
            &p.ln2_gain,
            &p.ln2_bias,
            &mut normed[t * d..(t + 1) * d],
        );
    }
    let mut h1 = vec![0.0; n * hidden];
    math::matmul_bias(&normed, n, d, &p.mlp_w1, &p.mlp_b1, hidden, &mut h1);
    for v in h1.iter_mut() {
        *v = math::gelu(*v);
    }
    let mut h2 = vec![0.0; n * d];
    math::matmul_bias(&h1, n, hidden, &p.mlp_w2, &p.mlp_b2, d, &mut h2);
    for i in 0..n * d {
        x[i] += h2[i];
    }
}

/// Pre-norm transformer forward over a `g x g` patch-token grid.
///
/// Pipeline: per-channel input affine, patch projection, optional additive
/// positional embedding, `depth` blocks of full self-attention + GELU MLP,
/// final layer norm. Output is `g x g x dim`.
pub fn vit_forward(tokens: &TokenGrid, params: &VitParams) -> Result<TokenGrid> {
    let cfg = &params.cfg;
    let g = cfg.grid_side;
    let in_dim = cfg.patch_dim();
    if tokens.rows() != g || tokens.cols() != g || tokens.dim() != in_dim {
        return Err(Error::Geometry(format!(
            "encoder expects {g}x{g}x{in_dim} tokens, got {}x{}x{}",
            tokens.rows(),
            tokens.cols(),
            tokens.dim()
        )));
    }
    let n = g * g;
    let d = cfg.dim;

    let mut mapped = tokens.data().to_vec();
    if cfg.input_scale != [1.0; 3] || cfg.input_shift != [0.0; 3] {
        for (i, v) in mapped.iter_mut().enumerate() {
            let c = i % CHANNELS;
            *v = *v * cfg.input_scale[c] + cfg.input_shift[c];
        }
    }

    let mut x = vec![0.0; n * d];
    math::matmul_bias(&mapped, n, in_dim, &params.patch_proj_w, &params.patch_proj_b, d, &mut x);
    if let Some(pos) = &params.pos_emb {
        for i in 0..n * d {
            x[i] += pos[i];
        }
    }
    for block in &params.blocks {
        attention_block(&mut x, n, cfg, block);
    }
    let mut out = vec![0.0; n * d];
    for t in 0..n {
        math::layer_norm(
            &x[t * d..(t + 1) * d],
            &params.final_gain,
            &params.final_bias,
            &mut out[t * d..(t + 1) * d],
        );
    }
    Ok(TokenGrid::from_raw(g, g, d, out))
}

/// Drops the tile's overlap-band tokens, returning the interior sub-grid
/// described by the rect's retain borders. Values are copied exactly.
pub fn drop_overlap_tokens(features: &TokenGrid, rect: &TileRect) -> Result<TokenGrid> {
    let b = rect.retain;
    if b.t + b.b >= features.rows() || b.l + b.r >= features.cols() {
        return Err(Error::Geometry(format!(
            "retain borders ({}, {}, {}, {}) leave no interior in a {}x{} grid",
            b.l,
            b.r,
            b.t,
            b.b,
            features.rows(),
            features.cols()
        )));
    }
    let rows = features.rows() - b.t - b.b;
    let cols = features.cols() - b.l - b.r;
    let dim = features.dim();
    let mut data = Vec::with_capacity(rows * cols * dim);
    for row in b.t..b.t + rows {
        for col in b.l..b.l + cols {
            data.extend_from_slice(features.token(row, col));
        }
    }
    Ok(TokenGrid::from_raw(rows, cols, dim, data))
}

/// Runs the full visual pipeline for a planned layout: resize to the
/// content size, pad the frame, then per tile crop -> patchify -> encode ->
/// drop overlap tokens, and finally stitch the retained grids row-major by
/// grid position.
///
/// Tiles are encoded in parallel; the stitched result is reduced by tile
/// index, so it does not depend on scheduling.
pub fn encode_layout(
    img: &ImageBuffer,
    layout: &TileLayout,
    params: &VitParams,
    cfg: &TilingConfig,
) -> Result<TokenGrid> {
    let p = layout.patch_size;
    if p != params.cfg.patch_size || p != cfg.patch_size {
        return Err(Error::Geometry(format!(
            "patch size mismatch: layout {p}, encoder {}, tiling {}",
            params.cfg.patch_size, cfg.patch_size
        )));
    }
    let tile_px = params.cfg.grid_side * p;
    if layout.tiles.iter().any(|t| t.w != tile_px || t.h != tile_px) {
        return Err(Error::Geometry(format!(
            "layout tiles do not match the encoder's {tile_px}px tile edge"
        )));
    }
    if layout.tiles.len() != layout.grid_rows * layout.grid_cols {
        return Err(Error::Geometry("layout tile list does not fill its grid".into()));
    }

    let content = imaging::resize_bilinear(img, layout.content_w, layout.content_h);
    let padded = if layout.frame_margin > 0 {
        imaging::pad_black_frame(&content, layout.frame_margin)
    } else {
        content
    };

    let retained: Vec<TokenGrid> = layout
        .tiles
        .par_iter()
        .map(|rect| {
            let tile = imaging::crop(&padded, rect.x, rect.y, rect.w, rect.h)?;
            let tokens = patchify(&tile, p)?;
            let features = vit_forward(&tokens, params)?;
            drop_overlap_tokens(&features, rect)
        })
        .collect::<Result<_>>()?;

    let (tr, tc) = (retained[0].rows(), retained[0].cols());
    if retained.iter().any(|g| g.rows() != tr || g.cols() != tc) {
        return Err(Error::Geometry("tiles retained unequal grids".into()));
    }
    let dim = retained[0].dim();
    let out_rows = layout.grid_rows * tr;
    let out_cols = layout.grid_cols * tc;
    let mut data = vec![0.0; out_rows * out_cols * dim];
    for (idx, grid) in retained.iter().enumerate() {
        let gi = idx / layout.grid_cols;
        let gj = idx % layout.grid_cols;
        for row in 0..tr {
            let dst_row = gi * tr + row;
            let dst = (dst_row * out_cols + gj * tc) * dim;
            let src = row * tc * dim;
            data[dst..dst + tc * dim].copy_from_slice(&grid.data()[src..src + tc * dim]);
        }
    }
    Ok(TokenGrid::from_raw(out_rows, out_cols, dim, data))
}


#[cfg(test)]
impl TileRect {
    fn full_for_test(side: usize) -> Self {
        TileRect {
            x: 0,
            y: 0,
            w: side,
            h: side,
            retain: crate::tiling::RetainBorders::default(),
        }
    }
}
