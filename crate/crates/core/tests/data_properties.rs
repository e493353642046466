//! Density-map and augmentation properties.

use crowd_nas::data::{
    augment, density_map, evaluate, generate_scenes, psnr, rotate_quarter, ssim, AugmentConfig, Dot, SceneConfig,
};
use crowd_nas::{Shape, Tensor};
use crowd_nas::seed::rng_for;
use proptest::prelude::*;
use rand::Rng;

fn mass(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum()
}

/// Random dots with a share placed exactly on the image border and corners.
fn random_dots(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Vec<Dot> {
    let edge = |rng: &mut dyn rand::RngCore, len: usize| -> f32 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => len as f32,
            _ => rng.random_range(0.0..=len as f32),
        }
    };
    (0..n)
        .map(|_| Dot {
            x: edge(rng, w),
            y: edge(rng, h),
        })
        .collect()
}

#[test]
fn density_conserves_count_for_random_dot_sets() {
    for i in 0..1000u64 {
        let mut rng = rng_for(i, "dots");
        let (h, w) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let n = rng.random_range(0..=60);
        let dots = random_dots(&mut rng, n, h, w);
        let radius = rng.random_range(0.05..6.0);
        let m = density_map(&dots, h, w, radius).unwrap();
        let err = (mass(&m) - n as f64).abs();
        assert!(err <= 1e-3 * n.max(1) as f64, "set {i}: {n} dots, mass error {err}");
        assert!(m.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn fifty_random_dots_sum_to_fifty() {
    let mut rng = rng_for(7, "fifty");
    let dots: Vec<Dot> = (0..50)
        .map(|_| Dot {
            x: rng.random_range(0.0..=32.0),
            y: rng.random_range(0.0..=32.0),
        })
        .collect();
    let m = density_map(&dots, 32, 32, 4.0).unwrap();
    assert!((mass(&m) - 50.0).abs() <= 5e-2);
}

#[test]
fn heads_near_the_bottom_are_larger() {
    let cfg = SceneConfig::default();
    let scenes = generate_scenes(&cfg, 100, 3).unwrap();
    let third = cfg.size as f32 / 3.0;
    let (mut top, mut bottom) = (Vec::new(), Vec::new());
    for s in &scenes {
        for (d, &r) in s.dots.iter().zip(&s.head_radii) {
            if d.y < third {
                top.push(r as f64);
            } else if d.y >= 2.0 * third {
                bottom.push(r as f64);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!top.is_empty() && !bottom.is_empty());
    assert!(mean(&bottom) > mean(&top), "bottom {} vs top {}", mean(&bottom), mean(&top));
}

#[test]
fn rotation_by_zero_is_identity() {
    let scene = generate_scenes(&SceneConfig::default(), 1, 11).unwrap().remove(0);
    let out = rotate_quarter(&scene, 0).unwrap();
    assert_eq!(out.image.data(), scene.image.data());
    assert_eq!(out.density.data(), scene.density.data());
    assert_eq!(out.dots, scene.dots);
}

fn constant_map(total: f32) -> Tensor<f32> {
    let shape = Shape::new(1, 1, 4, 4);
    Tensor::full(shape, total / shape.numel() as f32)
}

#[test]
fn evaluate_counts_small_example() {
    let preds = [constant_map(10.0), constant_map(20.0)];
    let gts = [constant_map(12.0), constant_map(18.0)];
    let m = evaluate(&preds, &gts).unwrap();
    assert!((m.mae - 2.0).abs() < 1e-5);
    assert!((m.mse - 2.0).abs() < 1e-5);
}

fn random_map(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f32> {
    let data = (0..h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_never_exceeds_root_mse(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = rng_for(seed, "metrics");
        let preds: Vec<_> = (0..n).map(|_| random_map(&mut rng, 12, 12)).collect();
        let gts: Vec<_> = (0..n).map(|_| random_map(&mut rng, 12, 12)).collect();
        let m = evaluate(&preds, &gts).unwrap();
        prop_assert!(m.mae <= m.mse + 1e-9);
    }

    #[test]
    fn ssim_is_bounded(seed in any::<u64>(), h in 2usize..20, w in 2usize..20) {
        let mut rng = rng_for(seed, "ssim");
        let (p, g) = (random_map(&mut rng, h, w), random_map(&mut rng, h, w));
        let v = ssim(&p, &g).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v), "ssim {}", v);
        prop_assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_as_error_grows(seed in any::<u64>(), a in 0.01f32..0.2, b in 0.01f32..0.2) {
        prop_assume!((a - b).abs() > 1e-3);
        let mut rng = rng_for(seed, "psnr");
        let g = random_map(&mut rng, 10, 10);
        let shifted = |d: f32| Tensor::from_vec(g.shape(), g.data().iter().map(|v| v + d).collect()).unwrap();
        let (pa, pb) = (psnr(&shifted(a), &g).unwrap(), psnr(&shifted(b), &g).unwrap());
        prop_assert_eq!(a < b, pa > pb);
    }


    #[test]
    fn augmentation_preserves_count(seed in any::<u64>(), flip: bool, rotate: bool, scale_min in 0.5f32..1.0) {
        let scene = generate_scenes(&SceneConfig::default(), 1, seed).unwrap().remove(0);
        let cfg = AugmentConfig { flip, rotate, scale_min, scale_max: 1.0 };
        let out = augment(&scene, &cfg, &mut rng_for(seed, "aug")).unwrap();
        prop_assert_eq!(out.count(), scene.count());
        prop_assert!((mass(&out.density) - scene.count() as f64).abs() <= 1e-3 * scene.count().max(1) as f64);
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for d in &out.dots {
            prop_assert!(d.x >= 0.0 && d.x <= 32.0 && d.y >= 0.0 && d.y <= 32.0);
        }
    }

    #[test]
    fn density_is_translation_equivariant_in_the_interior(x in 8.0f32..16.0, y in 8.0f32..16.0, r in 0.6f32..4.0) {
        let a = density_map(&[Dot { x, y }], 32, 32, r).unwrap();
        let b = density_map(&[Dot { x: x + 3.0, y: y + 5.0 }], 32, 32, r).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                prop_assert!((a.at(0, 0, i, j) - b.at(0, 0, i + 5, j + 3)).abs() < 1e-5);
            }
        }
    }
}
