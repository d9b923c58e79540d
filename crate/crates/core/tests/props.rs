//! Property tests for the geometric and numeric invariants.

mod common;

use flashtok::bench::{self, BenchSample, ParetoPoint};
use flashtok::encoder::TokenGrid;
use flashtok::imaging;
use flashtok::tiling::{self, Strategy, TilingConfig};
use proptest::prelude::*;

fn base_cfg(g: usize, o: usize, p: usize, max_tiles: usize) -> TilingConfig {
    TilingConfig {
        patch_size: p,
        tile_grid_side: g,
        overlap_rate: o as f64 / g as f64,
        max_tiles,
        shuffle_factor: 1,
        compress_after_iss: true,
    }
}

prop_compose! {
    fn arb_tiling()(
        g in prop::sample::select(vec![8usize, 12, 16, 32, 48]),
        o_raw in 0usize..=12,
        p in 1usize..=4,
        max_tiles in 1usize..=6,
    ) -> TilingConfig {
        base_cfg(g, o_raw.min(g / 4), p, max_tiles)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iss_and_dynamic_partition_the_content(
        cfg in arb_tiling(),
        img_w in 1usize..2500,
        img_h in 1usize..2500,
    ) {
        let iss = tiling::plan_iss(img_w, img_h, &cfg).unwrap();
        prop_assert!(common::is_exact_partition(&iss));
        let dynamic = tiling::plan_dynamic_crop(img_w, img_h, &cfg);
        prop_assert!(common::is_exact_partition(&dynamic));
    }

    #[test]
    fn tiles_are_uniform_in_bounds_and_capped(
        cfg in arb_tiling(),
        img_w in 1usize..2500,
        img_h in 1usize..2500,
    ) {
        for strategy in [Strategy::Static, Strategy::DynamicCrop, Strategy::OverlapCrop, Strategy::Iss] {
            let layout = tiling::plan(strategy, img_w, img_h, &cfg).unwrap();
            let side = cfg.tile_px();
            prop_assert!(layout.tiles.len() <= cfg.max_tiles);
            prop_assert_eq!(layout.tiles.len(), layout.grid_rows * layout.grid_cols);
            for t in &layout.tiles {
                prop_assert_eq!((t.w, t.h), (side, side));
                prop_assert!(t.x + t.w <= layout.padded_w());
                prop_assert!(t.y + t.h <= layout.padded_h());
            }
        }
    }

    #[test]
    fn llm_token_count_grows_with_tile_count(cfg in arb_tiling()) {
        let mut grids: Vec<(usize, usize)> = vec![];
        for rows in 1..=3usize {
            for cols in 1..=3usize {
                grids.push((rows, cols));
            }
        }
        grids.sort_by_key(|(r, c)| r * c);
        for strategy in [Strategy::DynamicCrop, Strategy::Iss] {
            let mut prev = 0usize;
            for &(rows, cols) in &grids {
                let layout = match strategy {
                    Strategy::DynamicCrop => tiling::plan_dynamic_crop_grid(rows, cols, &cfg),
                    _ => tiling::plan_iss_grid(rows, cols, &cfg).unwrap(),
                };
                let count = tiling::count_llm_tokens(&layout, &cfg);
                prop_assert!(count >= prev, "count dropped from {} to {}", prev, count);
                prev = count;
            }
        }
    }

    #[test]
    fn zero_overlap_iss_degenerates_to_dynamic_crop(
        g in prop::sample::select(vec![8usize, 16, 32]),
        p in 1usize..=4,
        rows in 1usize..=3,
        cols in 1usize..=3,
    ) {
        let cfg = base_cfg(g, 0, p, 9);
        let iss = tiling::plan_iss_grid(rows, cols, &cfg).unwrap();
        let dynamic = tiling::plan_dynamic_crop_grid(rows, cols, &cfg);
        prop_assert_eq!(iss.tiles, dynamic.tiles);
        prop_assert_eq!(
            (iss.content_w, iss.content_h, iss.frame_margin),
            (dynamic.content_w, dynamic.content_h, dynamic.frame_margin)
        );
    }

    #[test]
    fn grid_selection_is_scale_invariant_and_matches_oracle(
        img_w in 1usize..1200,
        img_h in 1usize..1200,
        scale in 2usize..6,
        max_tiles in 1usize..=6,
    ) {
        let cfg = base_cfg(16, 2, 2, max_tiles);
        let grid = tiling::select_grid(img_w, img_h, &cfg);
        prop_assert_eq!(grid, common::select_grid_oracle(img_w, img_h, max_tiles));
        prop_assert_eq!(grid, tiling::select_grid(img_w * scale, img_h * scale, &cfg));
    }

    #[test]
    fn resize_stays_in_input_range(
        seed in 0u64..1000,
        in_w in 1usize..24,
        in_h in 1usize..24,
        out_w in 1usize..48,
        out_h in 1usize..48,
    ) {
        let img = common::random_image(seed, in_w, in_h);
        let (lo, hi) = img
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let out = imaging::resize_bilinear(&img, out_w, out_h);
        for &v in out.data() {
            prop_assert!((lo..=hi).contains(&v), "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn crop_composes(
        seed in 0u64..1000,
        ax in 0usize..6, ay in 0usize..6,
        bx in 0usize..4, by in 0usize..4,
        bw in 1usize..6, bh in 1usize..6,
    ) {
        let img = common::random_image(seed, 24, 24);
        let aw = bx + bw + 2; // inner rect fits the outer one
        let ah = by + bh + 2;
        let outer = imaging::crop(&img, ax, ay, aw, ah).unwrap();
        let nested = imaging::crop(&outer, bx, by, bw, bh).unwrap();
        let direct = imaging::crop(&img, ax + bx, ay + by, bw, bh).unwrap();
        prop_assert_eq!(nested, direct);
    }

    #[test]
    fn pixel_shuffle_round_trips(
        seed in 0u64..1000,
        r in 1usize..=3,
        rows_blocks in 1usize..=4,
        cols_blocks in 1usize..=4,
        dim in 1usize..=5,
    ) {
        use rand::{Rng, SeedableRng};
        let rows = r * rows_blocks;
        let cols = r * cols_blocks;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols * dim).map(|_| rng.random()).collect();
        let grid = TokenGrid::new(rows, cols, dim, data).unwrap();
        let shuffled = flashtok::pixel_shuffle(&grid, r).unwrap();
        prop_assert_eq!((shuffled.rows(), shuffled.cols()), (rows / r, cols / r));
        prop_assert_eq!(shuffled.dim(), r * r * dim);
        let back = flashtok::pixel_unshuffle(&shuffled, r).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn pareto_front_matches_brute_force(
        raw in prop::collection::vec((0u32..500, 0u32..1000), 1..120),
    ) {
        let points: Vec<ParetoPoint> = raw
            .iter()
            .map(|&(t, a)| ParetoPoint::new(t as f64 / 5.0, a as f64 / 10.0).unwrap())
            .collect();
        let front = bench::pareto_front(&points);
        prop_assert_eq!(&front, &common::pareto_front_oracle(&points));
        // idempotent
        prop_assert_eq!(bench::pareto_front(&front), front);
    }

    #[test]
    fn summarize_tps_is_self_consistent(
        raw in prop::collection::vec((1usize..40, 0u32..10_000, 0u32..200), 1..20),
    ) {
        let samples: Vec<BenchSample> = raw
            .iter()
            .enumerate()
            .map(|(i, &(n_out, ttft_ms, tpot_ms))| BenchSample {
                image_id: format!("img{i:03}"),
                n_visual_tokens: 256,
                n_prompt_tokens: 0,
                n_output_tokens: n_out,
                ttft_s: ttft_ms as f64 / 1000.0 + 1e-4,
                tpot_s: vec![tpot_ms as f64 / 1000.0 + 1e-5; n_out],
            })
            .collect();
        let report = bench::summarize(&samples).unwrap();
        let recomputed = report.recompute_tps();
        prop_assert!((report.tps - recomputed).abs() <= 1e-9 * recomputed.abs());
    }
}
