use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svstitch::compose::{blend, compose, final_masks, min_cost_seam, SeamConfig};
use svstitch::image::MaskedImage;

/// Cheapest seam by enumerating every path with +-1 column moves.
fn brute_force_seam(cost: &[f64], w: usize, h: usize) -> f64 {
    fn walk(cost: &[f64], w: usize, h: usize, y: usize, x: usize, acc: f64, best: &mut f64) {
        let acc = acc + cost[y * w + x];
        if y + 1 == h {
            *best = best.min(acc);
            return;
        }
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            walk(cost, w, h, y + 1, nx, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    for x in 0..w {
        walk(cost, w, h, 0, x, 0.0, &mut best);
    }
    best
}

#[test]
fn seam_matches_exhaustive_enumeration() {
    let (w, h) = (12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let cost: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        let (seam, total) = min_cost_seam(&cost, &vec![true; w * h], w, h);
        let oracle = brute_force_seam(&cost, w, h);
        assert!((total - oracle).abs() < 1e-12, "{total} vs {oracle}");
        // The returned path is valid and has the reported cost.
        let cols: Vec<usize> = seam.iter().map(|c| c.unwrap()).collect();
        assert!(cols.windows(2).all(|p| p[0].abs_diff(p[1]) <= 1));
        let path_cost: f64 = cols.iter().enumerate().map(|(y, &x)| cost[y * w + x]).sum();
        assert!((path_cost - total).abs() < 1e-12);
    }
}

#[test]
fn interior_final_mask_is_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut field = || (0..50).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>();
    let (a, b, c, d) = (field(), field(), field(), field());
    let out = final_masks(&[vec![a.clone()], vec![b.clone(), c.clone()], vec![d.clone()]]).unwrap();
    assert_eq!(out[0], a);
    assert_eq!(out[2], d);
    for i in 0..50 {
        assert_eq!(out[1][i], b[i] * c[i]);
    }
}

#[test]
fn blend_matches_weighted_average_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (9, 7);
    let images: Vec<MaskedImage> = (0..3)
        .map(|_| {
            let vals: Vec<f64> = (0..w * h * 3).map(|_| rng.gen::<f64>()).collect();
            let mask: Vec<f64> = (0..w * h).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
            MaskedImage::new(w, h, 3, vals, mask).unwrap()
        })
        .collect();
    let finals: Vec<Vec<f64>> = images
        .iter()
        .map(|im| im.mask().iter().map(|m| m * rng.gen_range(0.1..1.0)).collect())
        .collect();
    let pano = blend(&images, &finals).unwrap();
    for p in 0..w * h {
        let den: f64 = finals.iter().map(|f| f[p]).sum();
        for c in 0..3 {
            let num: f64 = images.iter().zip(&finals).map(|(im, f)| f[p] * im.pixels()[p * 3 + c]).sum();
            let expected = if den > 0.0 { num / den } else { 0.0 };
            assert!((pano.image.pixels()[p * 3 + c] - expected).abs() < 1e-9);
        }
        let any = images.iter().any(|im| im.mask()[p] >= 0.5);
        assert_eq!(pano.image.mask()[p], if any { 1.0 } else { 0.0 });
    }
}

/// Horizontal strip of images on one canvas; neighbors overlap by `overlap`.
fn strip(n: usize, width: usize, overlap: usize, seed: u64) -> Vec<MaskedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = width - overlap;
    let canvas_w = step * (n - 1) + width;
    let h = 10;
    (0..n)
        .map(|i| {
            let x0 = i * step;
            let vals: Vec<f64> = (0..canvas_w * h * 3).map(|_| rng.gen::<f64>()).collect();
            let mask: Vec<f64> = (0..canvas_w * h)
                .map(|p| if (x0..x0 + width).contains(&(p % canvas_w)) { 1.0 } else { 0.0 })
                .collect();
            MaskedImage::new(canvas_w, h, 3, vals, mask).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn final_masks_partition_covered_pixels(n in 2usize..6, width in 12usize..30, overlap in 2usize..10, feather in 0.0f64..8.0, seed in 0u64..1000) {
        let images = strip(n, width, overlap.min(width - 1), seed);
        let cfg = SeamConfig { feather, ..SeamConfig::default() };
        let (pano, _) = compose(&images, &cfg).unwrap();
        for p in 0..images[0].mask().len() {
            let covered = images.iter().any(|im| im.mask()[p] >= 0.5);
            let s: f64 = pano.final_masks.iter().map(|f| f[p]).sum();
            if covered {
                prop_assert!((s - 1.0).abs() <= 1e-6, "sum {} at {}", s, p);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
    }
}
