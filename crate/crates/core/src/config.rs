//! Cross-module pipeline configuration and the named presets.
//!
//! Encoder dims in the presets are deliberately small (the encoder is a
//! deterministic stand-in, see [`crate::encoder`]); the tile geometry is
//! the real one: "siglip2like" tiles are 32x32 patches of 16 px (512 px),
//! "aimv2like" tiles are 32x32 patches of 14 px (448 px).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::bench::DecodeCostModel;
use crate::encoder::VitConfig;
use crate::error::{Error, Result};
use crate::math::GeluKind;
use crate::tiling::{Strategy, TilingConfig};

pub const PRESET_NAMES: [&str; 3] = ["static-siglip2like", "dynamic-aimv2like", "iss-aimv2like"];

/// Everything one pipeline run needs: strategy, tile geometry, encoder,
/// adapter and the decode cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub tiling: TilingConfig,
    pub vit: VitConfig,
    pub adapter: AdapterConfig,
    pub cost_model: DecodeCostModel,
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<PipelineConfig> {
        let (strategy, patch_size, max_tiles) = match name {
            "static-siglip2like" => (Strategy::Static, 16, 1),
            "dynamic-aimv2like" => (Strategy::DynamicCrop, 14, 4),
            "iss-aimv2like" => (Strategy::Iss, 14, 4),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (expected one of {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        let seed = 42;
        let tiling = TilingConfig {
            patch_size,
            tile_grid_side: 32,
            overlap_rate: 0.125,
            max_tiles,
            shuffle_factor: 2,
            compress_after_iss: true,
        };
        let vit = VitConfig {
            patch_size,
            grid_side: 32,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4.0,
            use_pos_emb: true,
            input_scale: [1.0; 3],
            input_shift: [0.0; 3],
            seed,
        };
        let adapter = AdapterConfig {
            in_dim: vit.dim,
            shuffle_factor: tiling.shuffle_factor,
            hidden_dim: 4 * 128,
            out_dim: 128,
            seed,
            gelu: GeluKind::Exact,
        };
        let cfg = PipelineConfig {
            strategy,
            tiling,
            vit,
            adapter,
            cost_model: DecodeCostModel {
                base_s: 0.01,
                per_ctx_s: 1e-5,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks each sub-config and every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.vit.validate()?;
        self.adapter.validate()?;
        self.cost_model.validate()?;
        if self.vit.grid_side != self.tiling.tile_grid_side {
            return Err(Error::Config(format!(
                "encoder grid_side {} != tiling tile_grid_side {}",
                self.vit.grid_side, self.tiling.tile_grid_side
            )));
        }
        if self.vit.patch_size != self.tiling.patch_size {
            return Err(Error::Config(format!(
                "encoder patch_size {} != tiling patch_size {}",
                self.vit.patch_size, self.tiling.patch_size
            )));
        }
        if self.adapter.in_dim != self.vit.dim {
            return Err(Error::Config(format!(
                "adapter in_dim {} != encoder dim {}",
                self.adapter.in_dim, self.vit.dim
            )));
        }
        // the adapter must shuffle exactly as the token accounting assumes
        let effective_shuffle = if self.strategy == Strategy::Iss && !self.tiling.compress_after_iss {
            1
        } else {
            self.tiling.shuffle_factor
        };
        if self.adapter.shuffle_factor != effective_shuffle {
            return Err(Error::Config(format!(
                "adapter shuffle_factor {} != effective pipeline shuffle {effective_shuffle}",
                self.adapter.shuffle_factor
            )));
        }
        Ok(())
    }
}
