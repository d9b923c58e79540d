//! Oracles shared by the integration test suites. Everything here is an
//! independent reference path: brute force, rasterization or direct
//! enumeration, never the implementation under test.

#![allow(dead_code)]

use std::path::Path;

use flashtok::adapter::{adapter_forward, adapter_grad, AdapterConfig, AdapterParams};
use flashtok::bench::ParetoPoint;
use flashtok::encoder::TokenGrid;
use flashtok::imaging::ImageBuffer;
use flashtok::tiling::TileLayout;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rasterizes every tile's retained patch region into content-grid
/// coordinates and counts coverage per content patch.
pub fn retained_patch_coverage(layout: &TileLayout) -> Vec<u32> {
    let p = layout.patch_size;
    assert_eq!(layout.content_w % p, 0);
    assert_eq!(layout.content_h % p, 0);
    assert_eq!(layout.frame_margin % p, 0);
    let rows = layout.content_h / p;
    let cols = layout.content_w / p;
    let margin = layout.frame_margin / p;
    let mut coverage = vec![0u32; rows * cols];
    for t in &layout.tiles {
        assert_eq!(t.x % p, 0);
        assert_eq!(t.y % p, 0);
        let (tx, ty) = (t.x / p, t.y / p);
        let (tw, th) = (t.w / p, t.h / p);
        for r in ty + t.retain.t..ty + th - t.retain.b {
            for c in tx + t.retain.l..tx + tw - t.retain.r {
                // padded -> content coordinates; frame cells fall outside
                let (Some(cr), Some(cc)) = (r.checked_sub(margin), c.checked_sub(margin)) else {
                    continue;
                };
                if cr < rows && cc < cols {
                    coverage[cr * cols + cc] += 1;
                }
            }
        }
    }
    coverage
}

/// True when the retained regions cover every content patch exactly once.
pub fn is_exact_partition(layout: &TileLayout) -> bool {
    retained_patch_coverage(layout).iter().all(|&c| c == 1)
}

/// Brute-force grid selection: scan all candidates for the best
/// log-aspect match, break ties toward more tiles, then more columns.
pub fn select_grid_oracle(img_w: usize, img_h: usize, max_tiles: usize) -> (usize, usize) {
    let target = (img_w as f64 / img_h as f64).ln();
    let mut candidates = Vec::new();
    for rows in 1..=max_tiles {
        for cols in 1..=max_tiles {
            if rows * cols <= max_tiles {
                let obj = ((cols as f64 / rows as f64).ln() - target).abs();
                candidates.push((rows, cols, obj));
            }
        }
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<_> = candidates.into_iter().filter(|c| c.2 == best).collect();
    tied.sort_by_key(|c| (c.0 * c.1, c.1));
    let (rows, cols, _) = *tied.last().unwrap();
    (rows, cols)
}

/// O(n^2) pairwise dominance filter, with exact duplicates collapsed to
/// their first occurrence; sorted by descending tps.
pub fn pareto_front_oracle(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let dominates = |p: &ParetoPoint, q: &ParetoPoint| {
        p.tps >= q.tps && p.accuracy >= q.accuracy && (p.tps > q.tps || p.accuracy > q.accuracy)
    };
    let mut front = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points
            .iter()
            .enumerate()
            .any(|(j, q)| i != j && dominates(q, p));
        let duplicate_of_earlier = points[..i].iter().any(|q| q == p);
        if !dominated && !duplicate_of_earlier {
            front.push(*p);
        }
    }
    front.sort_by(|a, b| b.tps.partial_cmp(&a.tps).unwrap());
    front
}

/// Deterministic random image with values on the 8-bit lattice.
pub fn random_image(seed: u64, w: usize, h: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(w, h, |_, _, _| rng.random_range(0..=255u32) as f64 / 255.0).unwrap()
}

/// Writes a deterministic random PPM fixture and returns its pixel data.
pub fn write_random_ppm(path: &Path, seed: u64, w: usize, h: usize) -> ImageBuffer {
    let img = random_image(seed, w, h);
    flashtok::imaging::encode_ppm(&img, path).unwrap();
    img
}

const FD_STEP: f64 = 1e-5;

fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central-finite-difference check of the adapter's analytic gradients on
/// random tokens/upstream/params drawn from `seed`. Returns the maximum
/// relative error over the input gradient and every parameter gradient.
pub fn adapter_grad_fd_max_rel_error(cfg: &AdapterConfig, rows: usize, cols: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    };
    let tokens = TokenGrid::new(rows, cols, cfg.in_dim, rand_vec(rows * cols * cfg.in_dim)).unwrap();
    let r = cfg.shuffle_factor;
    let upstream = TokenGrid::new(
        rows / r,
        cols / r,
        cfg.out_dim,
        rand_vec(rows / r * (cols / r) * cfg.out_dim),
    )
    .unwrap();
    let params = AdapterParams::init(cfg);

    let loss = |tokens: &TokenGrid, params: &AdapterParams| -> f64 {
        let out = adapter_forward(tokens, params, cfg).unwrap();
        out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };
    let grads = adapter_grad(&tokens, &params, cfg, &upstream).unwrap();

    let mut max_err: f64 = 0.0;

    // input tokens
    for i in 0..tokens.data().len() {
        let base = tokens.data()[i];
        let numeric = central_difference(
            |x| {
                let mut data = tokens.data().to_vec();
                data[i] = x;
                let t = TokenGrid::new(rows, cols, cfg.in_dim, data).unwrap();
                loss(&t, &params)
            },
            base,
        );
        max_err = max_err.max(rel_error(grads.tokens.data()[i], numeric));
    }

    // every parameter tensor
    let tensors: [(&[f64], fn(&mut AdapterParams) -> &mut Vec<f64>); 8] = [
        (&grads.ln_gain, |p| &mut p.ln_gain),
        (&grads.ln_bias, |p| &mut p.ln_bias),
        (&grads.w1, |p| &mut p.w1),
        (&grads.b1, |p| &mut p.b1),
        (&grads.w2, |p| &mut p.w2),
        (&grads.b2, |p| &mut p.b2),
        (&grads.w3, |p| &mut p.w3),
        (&grads.b3, |p| &mut p.b3),
    ];
    for (analytic, select) in tensors {
        for i in 0..analytic.len() {
            let base = select(&mut params.clone())[i];
            let numeric = central_difference(
                |x| {
                    let mut p = params.clone();
                    select(&mut p)[i] = x;
                    loss(&tokens, &p)
                },
                base,
            );
            max_err = max_err.max(rel_error(analytic[i], numeric));
        }
    }
    max_err
}
