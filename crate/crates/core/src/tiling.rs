//! Tile layout planning for the four image processing strategies and the
//! exact token budgets each one produces.
//!
//! All strategies cut the (resized, possibly framed) image into tiles of
//! `g*p` pixels so a fixed-resolution encoder can consume them:
//!
//! * `Static` — one tile, the whole image warped to `g*p` square.
//! * `DynamicCrop` — a `k_r x k_c` grid of non-overlapping tiles.
//! * `OverlapCrop` — same grid, tiles at stride `(g - 2o) * p` so
//!   neighbors share a `2*o*p`-pixel band; every token is kept, so the
//!   shared pixels produce duplicate tokens.
//! * `Iss` — overlapping tiles over a black-framed image; after encoding,
//!   an `o`-patch border is dropped from every tile so the retained token
//!   grids partition the content exactly while each tile's features have
//!   already attended over its neighbors' boundary pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image processing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    DynamicCrop,
    OverlapCrop,
    Iss,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::Static => "static",
            Strategy::DynamicCrop => "dynamic_crop",
            Strategy::OverlapCrop => "overlap_crop",
            Strategy::Iss => "iss",
        };
        f.write_str(name)
    }
}

/// Geometry knobs shared by all tiling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    /// Patch edge in pixels (`p`).
    pub patch_size: usize,
    /// Tile edge in patches (`g`); tiles are `g*p` pixels.
    pub tile_grid_side: usize,
    /// Fraction of `g` discarded per tile edge; `o = round(rate * g)`.
    pub overlap_rate: f64,
    /// Upper bound on `k_r * k_c`.
    pub max_tiles: usize,
    /// Pixel-shuffle factor `r` used downstream by the adapter.
    pub shuffle_factor: usize,
    /// Whether the shuffle is applied to retained tokens in ISS mode.
    /// When false, each ISS tile feeds its `(g - 2o)^2` tokens to the LLM
    /// uncompressed.
    pub compress_after_iss: bool,
}

impl TilingConfig {
    /// Discarded border per tile edge, in patches.
    pub fn overlap_patches(&self) -> usize {
        (self.overlap_rate * self.tile_grid_side as f64).round() as usize
    }

    /// Tile edge in pixels.
    pub fn tile_px(&self) -> usize {
        self.tile_grid_side * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let (p, g, r) = (self.patch_size, self.tile_grid_side, self.shuffle_factor);
        if p < 1 {
            return Err(Error::Config("patch_size must be >= 1".into()));
        }
        if g < 2 {
            return Err(Error::Config("tile_grid_side must be >= 2".into()));
        }
        if self.max_tiles < 1 {
            return Err(Error::Config("max_tiles must be >= 1".into()));
        }
        if !self.overlap_rate.is_finite() || !(0.0..0.5).contains(&self.overlap_rate) {
            return Err(Error::Config(format!(
                "overlap_rate must lie in [0, 0.5), got {}",
                self.overlap_rate
            )));
        }
        let o = self.overlap_patches();
        if g < 2 * o + 1 {
            return Err(Error::Config(format!(
                "overlap of {o} patches per edge leaves no interior in a {g}-patch tile"
            )));
        }
        if r < 1 {
            return Err(Error::Config("shuffle_factor must be >= 1".into()));
        }
        if g % r != 0 {
            return Err(Error::Config(format!(
                "shuffle_factor {r} must divide tile_grid_side {g}"
            )));
        }
        if (g - 2 * o) % r != 0 {
            return Err(Error::Config(format!(
                "shuffle_factor {r} must divide the retained side {} (g={g}, o={o})",
                g - 2 * o
            )));
        }
        Ok(())
    }
}

/// Border widths (in patches) discarded from a tile's feature map, one per
/// side; the remaining interior is what the tile retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetainBorders {
    pub l: usize,
    pub r: usize,
    pub t: usize,
    pub b: usize,
}

/// One tile: a pixel rectangle in the padded image plus its retained-token
/// border spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub retain: RetainBorders,
}

impl TileRect {
    fn full(x: usize, y: usize, side: usize) -> Self {
        TileRect {
            x,
            y,
            w: side,
            h: side,
            retain: RetainBorders::default(),
        }
    }
}

/// Output of a tiling strategy: resized content size, frame padding and
/// the ordered (row-major) tile rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub strategy: Strategy,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub content_w: usize,
    pub content_h: usize,
    pub frame_margin: usize,
    pub patch_size: usize,
    pub tiles: Vec<TileRect>,
}

impl TileLayout {
    /// Padded width: content plus the frame on both sides.
    pub fn padded_w(&self) -> usize {
        self.content_w + 2 * self.frame_margin
    }

    pub fn padded_h(&self) -> usize {
        self.content_h + 2 * self.frame_margin
    }

    /// Tile edge in patches; all strategies emit uniform square tiles.
    pub fn tile_grid_side(&self) -> usize {
        self.tiles[0].w / self.patch_size
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Domain(format!("layout JSON: {e}")))
    }
}

/// Picks the tile grid whose log aspect ratio is closest to the image's,
/// subject to `k_r * k_c <= max_tiles`. Ties prefer more tiles, then more
/// columns.
pub fn select_grid(img_w: usize, img_h: usize, cfg: &TilingConfig) -> (usize, usize) {
    assert!(img_w >= 1 && img_h >= 1, "image dims must be positive");
    let target = (img_w as f64 / img_h as f64).ln();
    let mut best: Option<(f64, usize, usize, usize)> = None; // (obj, tiles, cols, rows)
    for rows in 1..=cfg.max_tiles {
        for cols in 1..=cfg.max_tiles {
            let tiles = rows * cols;
            if tiles > cfg.max_tiles {
                continue;
            }
            let obj = ((cols as f64 / rows as f64).ln() - target).abs();
            let candidate = (obj, tiles, cols, rows);
            let replace = match &best {
                None => true,
                Some((bo, bt, bc, _)) => {
                    obj < *bo || (obj == *bo && (tiles > *bt || (tiles == *bt && cols > *bc)))
                }
            };
            if replace {
                best = Some(candidate);
            }
        }
    }
    let (_, _, cols, rows) = best.expect("at least one grid candidate");
    (rows, cols)
}

/// One tile covering the whole image warped to a `g*p` square.
pub fn plan_static(_img_w: usize, _img_h: usize, cfg: &TilingConfig) -> TileLayout {
    let side = cfg.tile_px();
    TileLayout {
        strategy: Strategy::Static,
        grid_rows: 1,
        grid_cols: 1,
        content_w: side,
        content_h: side,
        frame_margin: 0,
        patch_size: cfg.patch_size,
        tiles: vec![TileRect::full(0, 0, side)],
    }
}

fn grid_tiles(rows: usize, cols: usize, stride: usize, side: usize, retain: RetainBorders) -> Vec<TileRect> {
    let mut tiles = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            tiles.push(TileRect {
                x: j * stride,
                y: i * stride,
                w: side,
                h: side,
                retain,
            });
        }
    }
    tiles
}

/// Non-overlapping tiles partitioning the resized content at stride `g*p`.
pub fn plan_dynamic_crop(img_w: usize, img_h: usize, cfg: &TilingConfig) -> TileLayout {
    let (rows, cols) = select_grid(img_w, img_h, cfg);
    plan_dynamic_crop_grid(rows, cols, cfg)
}

/// Dynamic-crop layout for an explicit grid.
pub fn plan_dynamic_crop_grid(rows: usize, cols: usize, cfg: &TilingConfig) -> TileLayout {
    let side = cfg.tile_px();
    TileLayout {
        strategy: Strategy::DynamicCrop,
        grid_rows: rows,
        grid_cols: cols,
        content_w: cols * side,
        content_h: rows * side,
        frame_margin: 0,
        patch_size: cfg.patch_size,
        tiles: grid_tiles(rows, cols, side, side, RetainBorders::default()),
    }
}

/// Overlapping tiles at stride `(g - 2o) * p`, all tokens retained.
///
/// The content is sized so the first tile starts at 0 and the last ends on
/// the content edge; adjacent tiles share a `2*o*p`-pixel band whose
/// tokens are duplicated downstream.
pub fn plan_overlap_crop(img_w: usize, img_h: usize, cfg: &TilingConfig) -> TileLayout {
    let (rows, cols) = select_grid(img_w, img_h, cfg);
    plan_overlap_crop_grid(rows, cols, cfg)
}

/// Overlap-crop layout for an explicit grid.
pub fn plan_overlap_crop_grid(rows: usize, cols: usize, cfg: &TilingConfig) -> TileLayout {
    let p = cfg.patch_size;
    let g = cfg.tile_grid_side;
    let o = cfg.overlap_patches();
    let side = g * p;
    let stride = (g - 2 * o) * p;
    TileLayout {
        strategy: Strategy::OverlapCrop,
        grid_rows: rows,
        grid_cols: cols,
        content_w: (cols * (g - 2 * o) + 2 * o) * p,
        content_h: (rows * (g - 2 * o) + 2 * o) * p,
        frame_margin: 0,
        patch_size: p,
        tiles: grid_tiles(rows, cols, stride, side, RetainBorders::default()),
    }
}

/// Implicit-stitching layout: overlapping tiles over a black-framed
/// content, each discarding an `o`-patch border after encoding.
///
/// The frame is `o*p` pixels, tiles sit at stride `(g - 2o) * p` from the
/// padded origin, and the retained interiors map back onto the content
/// patch grid as an exact partition.
pub fn plan_iss(img_w: usize, img_h: usize, cfg: &TilingConfig) -> Result<TileLayout> {
    let (rows, cols) = select_grid(img_w, img_h, cfg);
    plan_iss_grid(rows, cols, cfg)
}

/// ISS layout for an explicit grid.
pub fn plan_iss_grid(rows: usize, cols: usize, cfg: &TilingConfig) -> Result<TileLayout> {
    cfg.validate()?;
    let p = cfg.patch_size;
    let g = cfg.tile_grid_side;
    let o = cfg.overlap_patches();
    let stride = (g - 2 * o) * p;
    let retain = RetainBorders {
        l: o,
        r: o,
        t: o,
        b: o,
    };
    Ok(TileLayout {
        strategy: Strategy::Iss,
        grid_rows: rows,
        grid_cols: cols,
        content_w: cols * (g - 2 * o) * p,
        content_h: rows * (g - 2 * o) * p,
        frame_margin: o * p,
        patch_size: p,
        tiles: grid_tiles(rows, cols, stride, g * p, retain),
    })
}

/// Plans a layout for the given strategy.
pub fn plan(strategy: Strategy, img_w: usize, img_h: usize, cfg: &TilingConfig) -> Result<TileLayout> {
    cfg.validate()?;
    Ok(match strategy {
        Strategy::Static => plan_static(img_w, img_h, cfg),
        Strategy::DynamicCrop => plan_dynamic_crop(img_w, img_h, cfg),
        Strategy::OverlapCrop => plan_overlap_crop(img_w, img_h, cfg),
        Strategy::Iss => plan_iss(img_w, img_h, cfg)?,
    })
}

/// Tokens entering the encoder: `g^2` per tile (retention happens after
/// encoding).
pub fn count_vit_tokens(layout: &TileLayout) -> usize {
    let p = layout.patch_size;
    layout.tiles.iter().map(|t| (t.w / p) * (t.h / p)).sum()
}

/// Tokens handed to the LLM after retention and (where enabled) pixel
/// shuffle compression.
pub fn count_llm_tokens(layout: &TileLayout, cfg: &TilingConfig) -> usize {
    let p = layout.patch_size;
    let r = cfg.shuffle_factor;
    let compress = layout.strategy != Strategy::Iss || cfg.compress_after_iss;
    layout
        .tiles
        .iter()
        .map(|t| {
            let rows = t.h / p - t.retain.t - t.retain.b;
            let cols = t.w / p - t.retain.l - t.retain.r;
            if compress {
                (rows / r) * (cols / r)
            } else {
                rows * cols
            }
        })
        .sum()
}
