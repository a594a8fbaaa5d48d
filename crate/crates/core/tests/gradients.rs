//! Loss gradients against central finite differences on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svstitch::image::MaskedImage;
use svstitch::losses::{alignment_loss, distortion_loss, fold_loss, shape_loss, size_loss, GridLoss};
use svstitch::mesh::{make_uniform_grid, ControlGrid};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const CASES: usize = 100;

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Random grid whose cells are jittered by up to `jitter` of a cell, so some
/// edges fold when `jitter > 0.5`.
fn random_grid(rng: &mut ChaCha8Rng, jitter: f64) -> ControlGrid {
    let u = rng.gen_range(1..6);
    let v = rng.gen_range(1..6);
    let (w, h) = (rng.gen_range(50.0..400.0), rng.gen_range(50.0..400.0));
    let g = make_uniform_grid(u, v, w, h).unwrap();
    let (cw, ch) = (w / u as f64, h / v as f64);
    let pts = g
        .points()
        .iter()
        .map(|p| [p[0] + rng.gen_range(-jitter..jitter) * cw, p[1] + rng.gen_range(-jitter..jitter) * ch])
        .collect();
    g.with_points(pts).unwrap()
}

fn check_grid_loss(name: &str, jitter: f64, f: fn(&ControlGrid) -> GridLoss) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let g = random_grid(&mut rng, jitter);
        let analytic: Vec<f64> = f(&g).grad.iter().flat_map(|p| *p).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..g.len() {
            for k in 0..2 {
                let shifted = |d: f64| {
                    let mut pts = g.points().to_vec();
                    pts[i][k] += d;
                    f(&g.with_points(pts).unwrap()).value
                };
                numeric.push((shifted(H) - shifted(-H)) / (2.0 * H));
            }
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

#[test]
fn shape_gradient() {
    check_grid_loss("shape", 0.3, shape_loss);
}

#[test]
fn size_gradient() {
    check_grid_loss("size", 0.3, size_loss);
}

#[test]
fn fold_gradient() {
    check_grid_loss("fold", 0.8, fold_loss);
}

#[test]
fn distortion_gradient() {
    check_grid_loss("distortion", 0.3, distortion_loss);
}

#[test]
fn alignment_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let (w, h, ch) = (rng.gen_range(3..10), rng.gen_range(3..10), if rng.gen_bool(0.5) { 3 } else { 1 });
        let mut mk = |partial: bool| {
            let vals: Vec<f64> = (0..w * h * ch).map(|_| rng.gen_range(0.01..0.99)).collect();
            let mask: Vec<f64> = (0..w * h).map(|_| if partial { rng.gen_range(0.05..0.95) } else { 1.0 }).collect();
            MaskedImage::new(w, h, ch, vals, mask).unwrap()
        };
        let tar = mk(true);
        let reference = mk(true);
        let loss = alignment_loss(&tar, &reference).unwrap();
        let mut analytic = loss.d_value.clone();
        analytic.extend(&loss.d_mask);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..w * h * ch {
            // |x| has no derivative at 0; skip entries whose difference lies within the step.
            if (tar.pixels()[i] - reference.pixels()[i]).abs() < 10.0 * H {
                numeric.push(analytic[i]);
                continue;
            }
            let f = |d: f64| {
                let mut p = tar.pixels().to_vec();
                p[i] += d;
                let t = MaskedImage::new(w, h, ch, p, tar.mask().to_vec()).unwrap();
                alignment_loss(&t, &reference).unwrap().value
            };
            numeric.push((f(H) - f(-H)) / (2.0 * H));
        }
        for i in 0..w * h {
            let f = |d: f64| {
                let mut m = tar.mask().to_vec();
                m[i] += d;
                let t = MaskedImage::new(w, h, ch, tar.pixels().to_vec(), m).unwrap();
                alignment_loss(&t, &reference).unwrap().value
            };
            numeric.push((f(H) - f(-H)) / (2.0 * H));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    assert!(worst < TOL, "alignment: worst relative error {worst:e}");
}

#[test]
fn hand_computed_values() {
    let shear = ControlGrid::new(2, 2, vec![[0.0, 0.0], [100.0, 10.0], [0.0, 100.0], [100.0, 110.0]], 100.0, 100.0).unwrap();
    assert!((shape_loss(&shear).value - 0.1).abs() < 1e-9);
    let g = make_uniform_grid(4, 3, 120.0, 90.0).unwrap();
    let doubled = g.with_points(g.points().iter().map(|p| [2.0 * p[0], 2.0 * p[1]]).collect()).unwrap();
    assert!((size_loss(&doubled).value - 2.0).abs() < 1e-9);
}
