//! Python bindings for the flashtok toolkit.
//!
//! Exposes the main types and operations — tiling configs and layouts,
//! token grids, the seeded encoder pipeline, the pixel-shuffle adapter,
//! LR schedules and Pareto analysis — as the `flashtok_py` module.
//! See `python/smoke_test.py` for a worked tour.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use flashtok::adapter;
use flashtok::bench;
use flashtok::encoder;
use flashtok::error::Error;
use flashtok::imaging;
use flashtok::schedule;
use flashtok::tiling;

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse_strategy(name: &str) -> PyResult<tiling::Strategy> {
    match name {
        "static" => Ok(tiling::Strategy::Static),
        "dynamic" | "dynamic_crop" => Ok(tiling::Strategy::DynamicCrop),
        "overlap" | "overlap_crop" => Ok(tiling::Strategy::OverlapCrop),
        "iss" => Ok(tiling::Strategy::Iss),
        _ => Err(PyValueError::new_err(format!(
            "unknown strategy '{name}' (static, dynamic, overlap, iss)"
        ))),
    }
}

/// Tile geometry configuration.
#[pyclass(name = "TilingConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyTilingConfig {
    inner: tiling::TilingConfig,
}

#[pymethods]
impl PyTilingConfig {
    #[new]
    #[pyo3(signature = (patch_size, tile_grid_side, overlap_rate, max_tiles, shuffle_factor = 2, compress_after_iss = true))]
    fn new(
        patch_size: usize,
        tile_grid_side: usize,
        overlap_rate: f64,
        max_tiles: usize,
        shuffle_factor: usize,
        compress_after_iss: bool,
    ) -> PyResult<Self> {
        let inner = tiling::TilingConfig {
            patch_size,
            tile_grid_side,
            overlap_rate,
            max_tiles,
            shuffle_factor,
            compress_after_iss,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PyTilingConfig { inner })
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }

    #[getter]
    fn tile_grid_side(&self) -> usize {
        self.inner.tile_grid_side
    }

    #[getter]
    fn overlap_rate(&self) -> f64 {
        self.inner.overlap_rate
    }

    #[getter]
    fn max_tiles(&self) -> usize {
        self.inner.max_tiles
    }

    #[getter]
    fn shuffle_factor(&self) -> usize {
        self.inner.shuffle_factor
    }

    /// Discarded border per tile edge, in patches.
    fn overlap_patches(&self) -> usize {
        self.inner.overlap_patches()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Planned tile layout.
#[pyclass(name = "TileLayout", skip_from_py_object)]
#[derive(Clone)]
struct PyTileLayout {
    inner: tiling::TileLayout,
}

#[pymethods]
impl PyTileLayout {
    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[getter]
    fn grid(&self) -> (usize, usize) {
        (self.inner.grid_rows, self.inner.grid_cols)
    }

    #[getter]
    fn content_size(&self) -> (usize, usize) {
        (self.inner.content_w, self.inner.content_h)
    }

    #[getter]
    fn frame_margin(&self) -> usize {
        self.inner.frame_margin
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }

    /// Tiles as `(x, y, w, h, (retain_l, retain_r, retain_t, retain_b))`.
    fn tiles(&self) -> Vec<(usize, usize, usize, usize, (usize, usize, usize, usize))> {
        self.inner
            .tiles
            .iter()
            .map(|t| (t.x, t.y, t.w, t.h, (t.retain.l, t.retain.r, t.retain.t, t.retain.b)))
            .collect()
    }

    fn vit_tokens(&self) -> usize {
        tiling::count_vit_tokens(&self.inner)
    }

    fn llm_tokens(&self, cfg: &PyTilingConfig) -> usize {
        tiling::count_llm_tokens(&self.inner, &cfg.inner)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "TileLayout({}, {}x{} tiles, content {}x{}, frame {})",
            self.inner.strategy,
            self.inner.grid_rows,
            self.inner.grid_cols,
            self.inner.content_w,
            self.inner.content_h,
            self.inner.frame_margin
        )
    }
}

/// A rows x cols grid of feature vectors.
#[pyclass(name = "TokenGrid", skip_from_py_object)]
#[derive(Clone)]
struct PyTokenGrid {
    inner: encoder::TokenGrid,
}

#[pymethods]
impl PyTokenGrid {
    #[new]
    fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyTokenGrid {
            inner: encoder::TokenGrid::new(rows, cols, dim, data).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.rows(), self.inner.cols(), self.inner.dim())
    }

    #[getter]
    fn num_tokens(&self) -> usize {
        self.inner.num_tokens()
    }

    fn token(&self, row: usize, col: usize) -> PyResult<Vec<f64>> {
        if row >= self.inner.rows() || col >= self.inner.cols() {
            return Err(PyValueError::new_err("token index out of range"));
        }
        Ok(self.inner.token(row, col).to_vec())
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        let (r, c, d) = self.shape();
        format!("TokenGrid({r}x{c}x{d})")
    }
}

/// Adapter shape (pixel shuffle + LayerNorm + three-linear GELU MLP).
#[pyclass(name = "AdapterConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyAdapterConfig {
    inner: adapter::AdapterConfig,
}

#[pymethods]
impl PyAdapterConfig {
    #[new]
    #[pyo3(signature = (in_dim, shuffle_factor, out_dim, hidden_dim = None, seed = 42))]
    fn new(
        in_dim: usize,
        shuffle_factor: usize,
        out_dim: usize,
        hidden_dim: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = adapter::AdapterConfig {
            in_dim,
            shuffle_factor,
            hidden_dim: hidden_dim.unwrap_or(4 * out_dim),
            out_dim,
            seed,
            gelu: Default::default(),
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PyAdapterConfig { inner })
    }

    fn param_count(&self) -> usize {
        adapter::param_count(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// One training stage of the LR schedule table.
#[pyclass(name = "StageConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyStageConfig {
    inner: schedule::StageConfig,
}

#[pymethods]
impl PyStageConfig {
    #[getter]
    fn stage_id(&self) -> u8 {
        self.inner.stage_id
    }

    #[getter]
    fn data_samples(&self) -> u64 {
        self.inner.data_samples
    }

    #[getter]
    fn lr_max(&self) -> f64 {
        self.inner.lr_max
    }

    #[getter]
    fn lr_min(&self) -> f64 {
        self.inner.lr_min
    }

    #[getter]
    fn warmup_steps(&self) -> u64 {
        self.inner.warmup_steps
    }

    #[getter]
    fn total_steps(&self) -> u64 {
        self.inner.total_steps
    }

    fn lr_at(&self, step: u64) -> PyResult<f64> {
        schedule::lr_at(step, &self.inner).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Full pipeline configuration; build from a preset and tweak via setters.
#[pyclass(name = "PipelineConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig {
    inner: flashtok::PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(PyPipelineConfig {
            inner: flashtok::PipelineConfig::preset(name).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[setter]
    fn set_strategy(&mut self, name: &str) -> PyResult<()> {
        let mut updated = self.inner.clone();
        updated.strategy = parse_strategy(name)?;
        updated.validate().map_err(to_py_err)?;
        self.inner = updated;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.vit.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.vit.seed = seed;
        self.inner.adapter.seed = seed;
    }

    fn tiling(&self) -> PyTilingConfig {
        PyTilingConfig {
            inner: self.inner.tiling,
        }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig(strategy {}, seed {})", self.inner.strategy, self.inner.vit.seed)
    }
}

#[pyfunction]
fn preset_names() -> Vec<String> {
    flashtok::config::PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Grid (rows, cols) chosen for an image size.
#[pyfunction]
fn select_grid(img_w: usize, img_h: usize, cfg: &PyTilingConfig) -> (usize, usize) {
    tiling::select_grid(img_w, img_h, &cfg.inner)
}

/// Plans a tile layout for the given strategy and image size.
#[pyfunction]
fn plan(strategy: &str, img_w: usize, img_h: usize, cfg: &PyTilingConfig) -> PyResult<PyTileLayout> {
    let strategy = parse_strategy(strategy)?;
    Ok(PyTileLayout {
        inner: tiling::plan(strategy, img_w, img_h, &cfg.inner).map_err(to_py_err)?,
    })
}

/// Space-to-depth compression of a token grid by factor `r`.
#[pyfunction]
fn pixel_shuffle(grid: &PyTokenGrid, r: usize) -> PyResult<PyTokenGrid> {
    Ok(PyTokenGrid {
        inner: adapter::pixel_shuffle(&grid.inner, r).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn pixel_unshuffle(grid: &PyTokenGrid, r: usize) -> PyResult<PyTokenGrid> {
    Ok(PyTokenGrid {
        inner: adapter::pixel_unshuffle(&grid.inner, r).map_err(to_py_err)?,
    })
}

/// Runs the adapter (seeded params) over a token grid.
#[pyfunction]
fn adapter_forward(grid: &PyTokenGrid, cfg: &PyAdapterConfig) -> PyResult<PyTokenGrid> {
    let params = adapter::AdapterParams::init(&cfg.inner);
    Ok(PyTokenGrid {
        inner: adapter::adapter_forward(&grid.inner, &params, &cfg.inner).map_err(to_py_err)?,
    })
}

/// Decoded image size as `(width, height)`.
#[pyfunction]
fn image_size(path: &str) -> PyResult<(usize, usize)> {
    let img = imaging::decode_image(path).map_err(to_py_err)?;
    Ok((img.width(), img.height()))
}

/// Full visual pipeline: decode, plan, encode each tile with the seeded
/// encoder, drop overlap tokens, stitch; optionally apply the adapter.
#[pyfunction]
#[pyo3(signature = (path, cfg, apply_adapter = false))]
fn encode_image(path: &str, cfg: &PyPipelineConfig, apply_adapter: bool) -> PyResult<PyTokenGrid> {
    let pipeline = &cfg.inner;
    pipeline.validate().map_err(to_py_err)?;
    let img = imaging::decode_image(path).map_err(to_py_err)?;
    let layout =
        tiling::plan(pipeline.strategy, img.width(), img.height(), &pipeline.tiling).map_err(to_py_err)?;
    let params = encoder::init_vit(&pipeline.vit);
    let mut grid =
        encoder::encode_layout(&img, &layout, &params, &pipeline.tiling).map_err(to_py_err)?;
    if apply_adapter {
        let adapter_params = adapter::AdapterParams::init(&pipeline.adapter);
        grid = adapter::adapter_forward(&grid, &adapter_params, &pipeline.adapter).map_err(to_py_err)?;
    }
    Ok(PyTokenGrid { inner: grid })
}

/// The five default training stages for a global batch size.
#[pyfunction]
fn default_stages(global_batch: u64) -> PyResult<Vec<PyStageConfig>> {
    if global_batch < 1 {
        return Err(PyValueError::new_err("global_batch must be >= 1"));
    }
    Ok(schedule::default_stages(global_batch)
        .into_iter()
        .map(|inner| PyStageConfig { inner })
        .collect())
}

/// Non-dominated `(tps, accuracy)` points, sorted by descending tps.
#[pyfunction]
fn pareto_front(points: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
    let points: Vec<bench::ParetoPoint> = points
        .into_iter()
        .map(|(tps, accuracy)| bench::ParetoPoint::new(tps, accuracy).map_err(to_py_err))
        .collect::<PyResult<_>>()?;
    Ok(bench::pareto_front(&points)
        .into_iter()
        .map(|p| (p.tps, p.accuracy))
        .collect())
}

#[pymodule]
fn flashtok_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTilingConfig>()?;
    m.add_class::<PyTileLayout>()?;
    m.add_class::<PyTokenGrid>()?;
    m.add_class::<PyAdapterConfig>()?;
    m.add_class::<PyStageConfig>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(select_grid, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_unshuffle, m)?)?;
    m.add_function(wrap_pyfunction!(adapter_forward, m)?)?;
    m.add_function(wrap_pyfunction!(image_size, m)?)?;
    m.add_function(wrap_pyfunction!(encode_image, m)?)?;
    m.add_function(wrap_pyfunction!(default_stages, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_front, m)?)?;
    Ok(())
}
