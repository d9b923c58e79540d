//! Learning-rate schedule math and the five-stage training configuration
//! table (linear warmup into cosine decay).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    Adapter,
    FullModel,
    LlmPlusAdapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainType {
    Full,
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage_id: u8,
    pub resolution: usize,
    pub data_samples: u64,
    pub trainable: TrainableScope,
    pub train_type: TrainType,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub epochs: u32,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min > self.lr_max {
            return Err(Error::Config("lr_min must not exceed lr_max".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config("warmup_steps must not exceed total_steps".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step`: linear warmup from 0 to `lr_max` over
/// `warmup_steps`, then
/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2`
/// with `t = step - warmup` and `T = total - warmup`.
pub fn lr_at(step: u64, cfg: &StageConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Domain(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.lr_max * step as f64 / cfg.warmup_steps as f64);
    }
    let t = (step - cfg.warmup_steps) as f64;
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    if span == 0.0 {
        return Ok(cfg.lr_min);
    }
    let cosine = (std::f64::consts::PI * (t / span)).cos();
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + cosine))
}

/// The five training stages with the published resolutions, sample counts,
/// trainable scopes and learning rates. `total_steps` is derived from the
/// sample count and the supplied global batch size (each sample is seen
/// once); only stage 1 warms up, for 400 steps.
pub fn default_stages(global_batch: u64) -> Vec<StageConfig> {
    assert!(global_batch >= 1, "global batch must be >= 1");
    let steps = |samples: u64| samples.div_ceil(global_batch);
    let stage = |stage_id, data_samples, trainable, train_type, lr_max, lr_min, warmup_steps| StageConfig {
        stage_id,
        resolution: 512,
        data_samples,
        trainable,
        train_type,
        lr_max,
        lr_min,
        warmup_steps,
        total_steps: steps(data_samples),
        epochs: 1,
    };
    vec![
        stage(1, 10_000_000, TrainableScope::Adapter, TrainType::Full, 1e-3, 2e-5, 400),
        stage(2, 24_000_000, TrainableScope::FullModel, TrainType::Full, 1e-5, 0.0, 0),
        stage(3, 6_000_000, TrainableScope::FullModel, TrainType::Full, 1e-5, 0.0, 0),
        stage(4, 10_000_000, TrainableScope::FullModel, TrainType::Full, 1e-5, 0.0, 0),
        stage(5, 87_000, TrainableScope::LlmPlusAdapter, TrainType::Lora, 1e-5, 0.0, 0),
    ]
}
