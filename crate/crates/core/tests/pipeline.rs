use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svstitch::align::{estimate_pair_motion_detailed, AlignConfig};
use svstitch::dataset::{synth_generate, SynthProjection, SynthSpec};
use svstitch::eval::run_ablation;
use svstitch::image::MaskedImage;
use svstitch::mesh::Homography;
use svstitch::pipeline::{edge_length_variance, evaluate_warps, project_set, stitch_set, StitchConfig, StitchResult, Toggles};

fn spec(n: usize, width: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_views: n,
        width,
        height: width * 3 / 4,
        perturbation: 6.0,
        seed,
        ..SynthSpec::default()
    }
}

fn assert_partition(r: &StitchResult) {
    let pano = &r.panorama;
    for p in 0..pano.image.mask().len() {
        if pano.image.mask()[p] > 0.0 {
            let s: f64 = pano.final_masks.iter().map(|f| f[p]).sum();
            assert!((s - 1.0).abs() <= 1e-6, "pixel {p}: masks sum to {s}");
        }
    }
}

/// Two unrelated noise images: any alignment must contort the mesh, which
/// flips cells unless the fold term prevents it.
fn noise_pair() -> (MaskedImage, MaskedImage) {
    let (w, h) = (128, 96);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mk = || {
        let v: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        MaskedImage::from_fn(w, h, 1, |x, y| ([v[y * w + x], 0.0, 0.0], 1.0))
    };
    (mk(), mk())
}

fn noise_config() -> AlignConfig {
    let mut cfg = AlignConfig {
        grid_u: 16,
        grid_v: 12,
        ..AlignConfig::default()
    };
    cfg.seed.enabled = false;
    cfg
}

#[test]
fn small_stitch_tracks_ground_truth() {
    let out = synth_generate(&spec(3, 256, 3)).unwrap();
    let cfg = StitchConfig::default();
    let r = stitch_set(&out.set, &cfg).unwrap();
    assert_partition(&r);
    let projected = project_set(&out.set, &cfg).unwrap();
    let (u, v) = (cfg.align.grid_u, cfg.align.grid_v);
    let gt = evaluate_warps(&projected, &out.gt_warps, u, v).unwrap();
    let id = evaluate_warps(&projected, &[Homography::identity(), Homography::identity(), Homography::identity()], u, v).unwrap();
    assert!(r.metrics.psnr >= 25.0, "{}", r.metrics.psnr);
    assert!(r.metrics.psnr >= gt.psnr - 3.0, "{} vs ground truth {}", r.metrics.psnr, gt.psnr);
    assert!(r.metrics.psnr >= id.psnr + 8.0, "{} vs identity {}", r.metrics.psnr, id.psnr);
    assert_eq!(r.pairs.len(), 2);
    assert_eq!(r.rendering.warped.len(), 3);
}

#[test]
fn fold_term_prevents_flipped_cells() {
    let (a, b) = noise_pair();
    let mut cfg = noise_config();
    cfg.weights.beta = 0.0;
    cfg.weights.gamma1 = 0.0;
    cfg.weights.gamma2 = 0.0;
    let on = estimate_pair_motion_detailed(&a, &b, &cfg).unwrap().final_loss();
    cfg.weights.gamma3 = 0.0;
    let off = estimate_pair_motion_detailed(&a, &b, &cfg).unwrap().final_loss();
    assert_eq!(on.fold, 0.0);
    assert!(off.fold > 0.0);
}

#[test]
fn shape_term_reduces_shape_loss() {
    let (a, b) = noise_pair();
    let mut cfg = noise_config();
    cfg.weights.gamma = 0.01;
    let on = estimate_pair_motion_detailed(&a, &b, &cfg).unwrap().final_loss();
    cfg.weights.gamma1 = 0.0;
    let off = estimate_pair_motion_detailed(&a, &b, &cfg).unwrap().final_loss();
    assert!(off.shape > on.shape, "off {} on {}", off.shape, on.shape);
}

#[test]
fn cylinder_limits_outer_stretching() {
    let out = synth_generate(&SynthSpec {
        perturbation: 0.0,
        projection: SynthProjection::Cylindrical,
        ..spec(5, 256, 1)
    })
    .unwrap();
    let outer = |r: &StitchResult| {
        let g = &r.rendering.grids;
        (edge_length_variance(&g[0]) + edge_length_variance(&g[g.len() - 1])) / 2.0
    };
    let base = StitchConfig::default();
    let with = stitch_set(&out.set, &base).unwrap();
    let without = stitch_set(&out.set, &Toggles { cylindrical: false, ..Toggles::ALL }.apply(&base)).unwrap();
    assert!(with.cylindrical && !without.cylindrical);
    assert!(outer(&without) > outer(&with), "{} vs {}", outer(&without), outer(&with));
    assert_partition(&with);
    assert_partition(&without);
}

#[test]
fn ablation_rows_cover_toggles_and_sizes() {
    let sets: Vec<_> = (0..2).map(|s| synth_generate(&spec(3, 128, s)).unwrap().set).collect();
    let toggles = [Toggles::ALL, Toggles { fold: false, ..Toggles::ALL }];
    let rows = run_ablation(&sets, &toggles, &StitchConfig::default()).unwrap();
    assert_eq!(rows.len(), 4);
    for (row, (t, n)) in rows.iter().zip([(0, 2), (0, 3), (1, 2), (1, 3)]) {
        assert_eq!(row.toggles, toggles[t]);
        assert_eq!(row.n_images, n);
        assert_eq!(row.stitched + row.failures.len(), 2);
    }
    let again = run_ablation(&sets, &toggles[..1], &StitchConfig::default()).unwrap();
    assert_eq!(again[0].psnr, rows[0].psnr);
    assert_eq!(again[1].edge_variance, rows[1].edge_variance);
}
