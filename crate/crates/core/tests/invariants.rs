use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shrubmap_core::chm::{
    build_chm, label_cloud_coarse, label_shrub_fine, splat_returns, PointCloud, Return, ShrubRule, Splat,
};
use shrubmap_core::predictors::stack::STACK_BANDS;
use shrubmap_core::predictors::PredictorStack;
use shrubmap_core::raster::{
    aggregate_majority, apply_mask, landcover as lc, GridTransform, MaskSpec, Raster, BYTE_NODATA, FLOAT_NODATA,
};
use shrubmap_core::sampling::{split_records, stratified_balanced_sample, Split, DEFAULT_FRACTIONS};

fn bool_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> (GridTransform, Vec<u8>) {
    let g = GridTransform::new(1000.0, 2000.0, 1.0, w, h).unwrap();
    let cells = (0..w * h)
        .map(|_| match rng.random::<f64>() {
            x if x < 0.05 => BYTE_NODATA,
            x if x < density => 1,
            _ => 0,
        })
        .collect();
    (g, cells)
}

fn brute_majority(cells: &[u8], w: usize, factor: usize, cw: usize, ch: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for by in 0..ch {
        for bx in 0..cw {
            let mut n = 0;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    n += (cells[y * w + x] == 1) as usize;
                }
            }
            out.push((2 * n > factor * factor) as u8);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn majority_matches_block_count_and_is_monotone(
        seed in any::<u64>(),
        factor in 1usize..7,
        cw in 1usize..6,
        ch in 1usize..6,
        density in 0.2f64..0.8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (cw * factor, ch * factor);
        let (g, cells) = bool_grid(&mut rng, w, h, density);
        let fine = Raster::boolean(g, BYTE_NODATA, cells.clone()).unwrap();
        let coarse = aggregate_majority(&fine, factor, 0.5).unwrap();
        let got = coarse.as_u8().unwrap().to_vec();
        prop_assert_eq!(&got, &brute_majority(&cells, w, factor, cw, ch));

        // Turning a false subpixel true never clears a coarse cell.
        let falses: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] != 1).collect();
        if let Some(&i) = falses.get(rng.random_range(0..falses.len().max(1))) {
            let mut more = cells.clone();
            more[i] = 1;
            let bumped = aggregate_majority(&Raster::boolean(g, BYTE_NODATA, more).unwrap(), factor, 0.5).unwrap();
            for (a, b) in got.iter().zip(bumped.as_u8().unwrap()) {
                prop_assert!(b >= a);
            }
        }

        // Each true coarse cell needs more than half of its block.
        let fine_true = cells.iter().filter(|&&c| c == 1).count() as f64;
        let coarse_true = got.iter().filter(|&&c| c == 1).count() as f64;
        prop_assert!(coarse_true * (factor * factor) as f64 / 2.0 <= fine_true);
    }

    #[test]
    fn sras_bytes_round_trip(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, kind in 0u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridTransform::new(rng.random_range(-1e6..1e6), rng.random_range(-1e6..1e6), 30.0, w, h).unwrap();
        let r = match kind {
            0 => Raster::float32(
                g,
                FLOAT_NODATA,
                (0..w * h).map(|_| if rng.random_bool(0.1) { FLOAT_NODATA as f32 } else { rng.random::<f32>() * 100.0 }).collect(),
            ),
            1 => Raster::categorical(g, BYTE_NODATA, (0..w * h).map(|_| rng.random()).collect()),
            _ => Raster::boolean(g, BYTE_NODATA, (0..w * h).map(|_| [0, 1, BYTE_NODATA][rng.random_range(0..3)]).collect()),
        }
        .unwrap();
        let bytes = r.to_bytes();
        let back = Raster::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, r);
    }

    #[test]
    fn mask_is_idempotent(seed in any::<u64>(), w in 1usize..15, h in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridTransform::new(0.0, 0.0, 30.0, w, h).unwrap();
        let classes = [lc::TREE_COVER, lc::GRASS_SHRUB, lc::WATER, lc::DEVELOPED, lc::CROPLAND];
        let cover = Raster::categorical(g, BYTE_NODATA, (0..w * h).map(|_| classes[rng.random_range(0..5)]).collect()).unwrap();
        let dem = Raster::float32(g, FLOAT_NODATA, (0..w * h).map(|_| rng.random_range(500.0..1500.0)).collect()).unwrap();
        let target = Raster::float32(g, FLOAT_NODATA, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        let spec = MaskSpec::default();
        let once = apply_mask(&target, &cover, &dem, &spec).unwrap();
        let twice = apply_mask(&once, &cover, &dem, &spec).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn chm_is_the_per_cell_maximum(seed in any::<u64>(), w in 1usize..12, h in 1usize..12, n in 0usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridTransform::new(100.0, 200.0, 2.0, w, h).unwrap();
        let returns: Vec<Return> = (0..n)
            .map(|_| Return {
                x: rng.random_range(95.0..105.0 + 2.0 * w as f64),
                y: rng.random_range(195.0 - 2.0 * h as f64..205.0),
                h: rng.random_range(0.0..30.0),
            })
            .collect();
        let chm = build_chm(&PointCloud::new(returns.clone()).unwrap(), g);
        let mut top = vec![None::<f32>; w * h];
        for r in &returns {
            let (c, row) = (((r.x - 100.0) / 2.0).floor(), ((200.0 - r.y) / 2.0).floor());
            if c >= 0.0 && row >= 0.0 && (c as usize) < w && (row as usize) < h {
                let cell = &mut top[row as usize * w + c as usize];
                *cell = Some(cell.map_or(r.h, |t: f32| t.max(r.h)));
            }
        }
        let got = chm.as_f32().unwrap();
        for (i, want) in top.iter().enumerate() {
            match want {
                Some(v) => prop_assert_eq!(got[i], *v),
                None => prop_assert!(chm.is_nodata_at(i)),
            }
        }
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, coarse: &GridTransform, n: usize) -> Vec<Return> {
    let (x0, y0, x1, y1) = coarse.extent();
    (0..n)
        .map(|_| Return {
            x: rng.random_range(x0 - 1.0..x1 + 1.0),
            y: rng.random_range(y0 - 1.0..y1 + 1.0),
            h: if rng.random_bool(0.6) { rng.random_range(1.0..5.0) } else { rng.random_range(0.0..12.0) },
        })
        .collect()
}

#[test]
fn streamed_labels_equal_the_composed_steps_in_any_return_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let factor = 6;
    let coarse = GridTransform::new(0.0, 60.0, 6.0, 8, 10).unwrap();
    let rule = ShrubRule::default();
    for splat in [None, Some(Splat::default())] {
        let mut returns = random_cloud(&mut rng, &coarse, 5000);
        let cloud = PointCloud::new(returns.clone()).unwrap();
        let streamed = label_cloud_coarse(&cloud, coarse, factor, splat, &rule, None).unwrap();

        let dense = match splat {
            Some(s) => splat_returns(&cloud, s.pulse_width_m, s.points_per_circle).unwrap(),
            None => cloud.clone(),
        };
        let chm = build_chm(&dense, coarse.refine(factor).unwrap());
        let composed = aggregate_majority(&label_shrub_fine(&chm, &rule).unwrap(), factor, 0.5).unwrap();
        assert_eq!(streamed, composed);

        returns.shuffle(&mut rng);
        let shuffled = PointCloud::new(returns).unwrap();
        assert_eq!(label_cloud_coarse(&shuffled, coarse, factor, splat, &rule, None).unwrap(), streamed);
    }
}

#[test]
fn splits_are_balanced_up_to_hypergeometric_noise() {
    let (w, h) = (60, 50);
    let g = GridTransform::new(0.0, 0.0, 30.0, w, h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.25)).collect();
    let bands = STACK_BANDS
        .iter()
        .map(|n| {
            let cells = (0..w * h).map(|_| rng.random::<f32>()).collect();
            (n.to_string(), Raster::float32(g, FLOAT_NODATA, cells).unwrap())
        })
        .collect();
    let stack = PredictorStack::new(bands, Raster::filled_f32(g, 2015.0)).unwrap();
    let names: Vec<String> = ["TCB", "NBR"].iter().map(|s| s.to_string()).collect();
    for seed in 0..20 {
        let n = 1000;
        let records = stratified_balanced_sample(&Raster::from_bools(g, &labels).unwrap(), &stack, &names, n, seed, 0).unwrap();
        assert_eq!(records.iter().filter(|r| r.label).count(), n / 2);
        let set = split_records(records, names.clone(), DEFAULT_FRACTIONS, seed + 1).unwrap();
        for which in Split::ALL {
            let m = set.count(which) as f64;
            let pos = set.split(which).filter(|r| r.label).count() as f64;
            // Hypergeometric spread of positives among m of n balanced records.
            let nn = n as f64;
            let sd = (m * 0.25 * (nn - m) / (nn - 1.0)).sqrt();
            assert!((pos - m / 2.0).abs() <= 5.0 * sd, "seed {seed} {which:?}: {pos} of {m}");
        }
        let again = stratified_balanced_sample(&Raster::from_bools(g, &labels).unwrap(), &stack, &names, n, seed, 0).unwrap();
        let again = split_records(again, names.clone(), DEFAULT_FRACTIONS, seed + 1).unwrap();
        assert_eq!(again.to_tsv(), set.to_tsv());
    }
}
