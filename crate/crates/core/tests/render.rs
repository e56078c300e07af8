mod common;

use proptest::prelude::*;
use splatar_core::render::GaussianCloud;
use splatar_core::synthetic;
use splatar_core::{render, render_oracle, Camera, Rasterizer, RenderTarget};

fn draw(cloud: &GaussianCloud, cam: &Camera, bg: [f32; 3]) -> RenderTarget {
    let mut t = RenderTarget::for_camera(cam, bg);
    render(&cloud.view(), cam, &mut t).unwrap();
    t
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn tiled_matches_oracle() {
    let cam = synthetic::scene_camera(64, 64);
    for seed in 0..30 {
        let cloud = synthetic::random_cloud(1 + (seed as usize * 7) % 200, seed);
        let fast = draw(&cloud, &cam, [0.2, 0.3, 0.4]);
        let mut slow = RenderTarget::for_camera(&cam, [0.2, 0.3, 0.4]);
        render_oracle(&cloud.view(), &cam, &mut slow).unwrap();
        let d = fast.max_abs_diff(&slow);
        assert!(d <= 1e-5, "seed {seed}: {d}");
    }
}

#[test]
fn odd_sized_images_match_oracle() {
    for (w, h) in [(1, 1), (15, 17), (33, 16), (70, 5)] {
        let cam = synthetic::front_camera(w, h, 1.2 * w.max(h) as f32, 3.0);
        let cloud = synthetic::random_cloud(60, u64::from(w * h));
        let fast = draw(&cloud, &cam, [0.0; 3]);
        let mut slow = RenderTarget::for_camera(&cam, [0.0; 3]);
        render_oracle(&cloud.view(), &cam, &mut slow).unwrap();
        assert!(fast.max_abs_diff(&slow) <= 1e-5, "{w}x{h}");
    }
}

#[test]
fn thread_count_does_not_change_bytes() {
    let cam = synthetic::scene_camera(64, 64);
    for seed in 0..5 {
        let cloud = synthetic::random_cloud(200, seed);
        let one = in_pool(1, || draw(&cloud, &cam, [0.0; 3]));
        let eight = in_pool(8, || draw(&cloud, &cam, [0.0; 3]));
        assert_eq!(one, eight);
        assert_eq!(one, in_pool(1, || draw(&cloud, &cam, [0.0; 3])));
    }
}

#[test]
fn points_behind_the_camera_are_invisible() {
    let cam = synthetic::scene_camera(32, 32);
    let mut cloud = GaussianCloud::default();
    cloud.push([0.0, 0.0, 5.0], [1.0, 0.0, 0.0, 0.0], [0.1; 3], [1.0; 3], 0.9);
    cloud.push([0.0, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [0.1; 3], [1.0; 3], 0.9);
    let t = draw(&cloud, &cam, [0.25; 3]);
    assert!(t.rgb.iter().all(|&v| v == 0.25));
    assert!(t.alpha.iter().all(|&v| v == 0.0));
}

#[test]
fn scene_arrays_must_agree() {
    let cam = synthetic::scene_camera(8, 8);
    let mut cloud = synthetic::random_cloud(3, 0);
    cloud.opacities.pop();
    let mut t = RenderTarget::for_camera(&cam, [0.0; 3]);
    assert!(render(&cloud.view(), &cam, &mut t).is_err());
}

#[test]
fn color_gradient_matches_finite_differences() {
    for seed in 0..6 {
        let e = common::color_gradient_error(seed, 12, 1e-3);
        assert!(e <= 1e-3, "seed {seed}: relative error {e}");
    }
}

#[test]
fn color_gradient_of_l1_loss() {
    // chain L1 -> color_backward on a 10-Gaussian scene, away from kinks
    use splatar_core::losses::{l1_loss, l1_loss_grad};
    use splatar_core::metrics::ImageRef;

    let cam = synthetic::scene_camera(24, 24);
    let mut cloud = synthetic::random_cloud(10, 42);
    cloud.colors.iter_mut().for_each(|c| *c = c.map(|x| 0.2 + 0.5 * x));
    let target: Vec<f32> = (0..24 * 24 * 3).map(|i| if i % 2 == 0 { 0.95 } else { -0.05 }).collect();
    let loss = |cloud: &GaussianCloud| {
        let t = draw(cloud, &cam, [0.0; 3]);
        l1_loss(ImageRef::new(&t.rgb, 24, 24, 3).unwrap(), ImageRef::new(&target, 24, 24, 3).unwrap()).unwrap()
    };
    let mut rast = Rasterizer::new();
    let mut t = RenderTarget::for_camera(&cam, [0.0; 3]);
    rast.render_recorded(&cloud.view(), &cam, &mut t).unwrap();
    let g = l1_loss_grad(ImageRef::new(&t.rgb, 24, 24, 3).unwrap(), ImageRef::new(&target, 24, 24, 3).unwrap()).unwrap();
    let analytic = rast.color_backward(&g).unwrap();
    let h = 1e-3f32;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for k in 0..10 {
        for c in 0..3 {
            let base = cloud.colors[k][c];
            cloud.colors[k][c] = base + h;
            let up = loss(&cloud);
            cloud.colors[k][c] = base - h;
            let down = loss(&cloud);
            cloud.colors[k][c] = base;
            let fd = (up - down) / (2.0 * f64::from(h));
            num += (fd - analytic[k][c]).powi(2);
            den += analytic[k][c].powi(2);
        }
    }
    let e = num.sqrt() / den.sqrt();
    assert!(e <= 1e-3, "relative error {e}");
}

#[test]
fn recorded_weights_reproduce_the_image() {
    let cam = synthetic::scene_camera(32, 32);
    let cloud = synthetic::random_cloud(40, 8);
    let mut rast = Rasterizer::new();
    let mut t = RenderTarget::for_camera(&cam, [0.0; 3]);
    rast.render_recorded(&cloud.view(), &cam, &mut t).unwrap();
    let rec = rast.record().unwrap();
    let mut rgb = vec![0.0f64; t.rgb.len()];
    let mut alpha = vec![0.0f64; t.alpha.len()];
    for c in &rec.contributions {
        for k in 0..3 {
            rgb[3 * c.pixel as usize + k] += f64::from(c.weight) * f64::from(cloud.colors[c.point as usize][k]);
        }
        alpha[c.pixel as usize] += f64::from(c.weight);
    }
    for (a, b) in rgb.iter().zip(&t.rgb) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
    for (a, b) in alpha.iter().zip(&t.alpha) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn values_stay_in_range_and_white_equals_alpha(seed in 0u64..100_000, n in 0usize..120) {
        let cam = synthetic::scene_camera(32, 32);
        let mut cloud = synthetic::random_cloud(n, seed);
        let t = draw(&cloud, &cam, [0.0; 3]);
        prop_assert!(t.rgb.iter().chain(&t.alpha).all(|v| (0.0..=1.0).contains(v)));
        cloud.colors.iter_mut().for_each(|c| *c = [1.0; 3]);
        let white = draw(&cloud, &cam, [0.0; 3]);
        for (i, a) in white.alpha.iter().enumerate() {
            for k in 0..3 {
                prop_assert!((white.rgb[3 * i + k] - a).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn background_enters_through_transmittance(seed in 0u64..100_000, bg in prop::array::uniform3(0.0f32..1.0)) {
        let cam = synthetic::scene_camera(32, 32);
        let mut cloud = synthetic::random_cloud(50, seed);
        cloud.colors.iter_mut().for_each(|c| *c = c.map(|x| 0.5 * x));
        let black = draw(&cloud, &cam, [0.0; 3]);
        let lit = draw(&cloud, &cam, bg);
        prop_assert_eq!(&black.alpha, &lit.alpha);
        for (i, a) in black.alpha.iter().enumerate() {
            for k in 0..3 {
                let want = black.rgb[3 * i + k] + (1.0 - a) * bg[k];
                prop_assert!((lit.rgb[3 * i + k] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn alpha_grows_with_opacity(seed in 0u64..100_000, gain in 1.0f32..3.0) {
        let cam = synthetic::scene_camera(32, 32);
        let cloud = synthetic::random_cloud(40, seed);
        let mut denser = cloud.clone();
        denser.opacities.iter_mut().for_each(|o| *o = (*o * gain).min(1.0));
        let (a, b) = (draw(&cloud, &cam, [0.0; 3]), draw(&denser, &cam, [0.0; 3]));
        for (x, y) in a.alpha.iter().zip(&b.alpha) {
            prop_assert!(*y >= x - 1e-6);
        }
    }

    #[test]
    fn input_order_does_not_matter(seed in 0u64..100_000) {
        let cam = synthetic::scene_camera(32, 32);
        let cloud = synthetic::random_cloud(60, seed);
        let mut rev = cloud.clone();
        rev.positions.reverse();
        rev.rotations.reverse();
        rev.scales.reverse();
        rev.colors.reverse();
        rev.opacities.reverse();
        prop_assert!(draw(&cloud, &cam, [0.0; 3]).max_abs_diff(&draw(&rev, &cam, [0.0; 3])) < 1e-6);
    }
}
