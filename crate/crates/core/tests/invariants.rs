use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdepth::losses::{grad_loss, normalized_gradient, DisparityMap};
use rdepth::metrics::{abs_inv, abs_rel, rmse, rmse_log, sc_inv};
use rdepth::pose::PoseVector;
use rdepth::synthdata::{generate_scene, render_frame, Difficulty, Intrinsics, MAX_SURFACE_DEPTH, MIN_SURFACE_DEPTH};
use rdepth::tensor::{Graph, Tensor};

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.05..3.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    // <conv(x), y> == <x, deconv(y)> with a shared kernel and zero bias.
    #[test]
    fn deconv_is_adjoint_of_conv(
        seed in any::<u64>(),
        cin in 1usize..4,
        cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3,
        hq in 1usize..5,
        wq in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (hq * stride, wq * stride);
        let x = random(&mut rng, cin * h * w);
        let kernel = random(&mut rng, cout * cin * k * k);
        let y = random(&mut rng, cout * hq * wq);

        let mut g = Graph::<f64>::new();
        let xv = g.constant(&Tensor::new(&[cin, h, w], x.clone()).unwrap());
        let kv = g.constant(&Tensor::new(&[cout, cin, k, k], kernel).unwrap());
        let b_out = g.constant(&Tensor::zeros(&[cout]));
        let b_in = g.constant(&Tensor::zeros(&[cin]));
        let yv = g.constant(&Tensor::new(&[cout, hq, wq], y.clone()).unwrap());
        let cx = g.conv2d(xv, kv, b_out, stride).unwrap();
        let dy = g.deconv2d(yv, kv, b_in, stride).unwrap();
        prop_assert_eq!(g.shape(cx), &[cout, hq, wq]);
        prop_assert_eq!(g.shape(dy), &[cin, h, w]);
        let lhs = dot(g.value(cx), &y);
        let rhs = dot(&x, g.value(dy));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn normalized_gradient_is_bounded_and_scale_free(
        seed in any::<u64>(),
        h in 2usize..10,
        w in 2usize..10,
        c in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = DisparityMap::new(h, w, positive(&mut rng, h * w)).unwrap();
        let scaled = xi.scaled(c).unwrap();
        for step in 1..h.min(w) {
            let a = normalized_gradient(&xi, step).unwrap();
            let b = normalized_gradient(&scaled, step).unwrap();
            for (u, v) in a.along_rows.iter().chain(&a.along_cols).zip(b.along_rows.iter().chain(&b.along_cols)) {
                prop_assert!((-1.0..=1.0).contains(u));
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_loss_ignores_joint_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (20, 20);
        let p = DisparityMap::new(h, w, positive(&mut rng, h * w)).unwrap();
        let t = DisparityMap::new(h, w, positive(&mut rng, h * w)).unwrap();
        let a = grad_loss(&[p.clone()], &[t.clone()]).unwrap();
        let b = grad_loss(&[p.scaled(c).unwrap()], &[t.scaled(c).unwrap()]).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        // Rescaling only the prediction leaves the loss unchanged as well.
        let d = grad_loss(&[p.scaled(c).unwrap()], &[t]).unwrap();
        prop_assert!((a - d).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn metric_scale_behaviour(seed in any::<u64>(), c in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = positive(&mut rng, 64);
        let gt = positive(&mut rng, 64);
        let cz: Vec<f64> = z.iter().map(|v| v * c).collect();
        let cgt: Vec<f64> = gt.iter().map(|v| v * c).collect();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs());
        // sc-inv ignores a global scale on either argument.
        prop_assert!(close(sc_inv(&z, &gt, None).unwrap(), sc_inv(&cz, &gt, None).unwrap()));
        prop_assert!(close(sc_inv(&z, &gt, None).unwrap(), sc_inv(&z, &cgt, None).unwrap()));
        // Relative and log errors ignore a joint scale; rmse scales with it.
        prop_assert!(close(abs_rel(&z, &gt, None).unwrap(), abs_rel(&cz, &cgt, None).unwrap()));
        prop_assert!(close(rmse_log(&z, &gt, None).unwrap(), rmse_log(&cz, &cgt, None).unwrap()));
        prop_assert!(close(c * rmse(&z, &gt, None).unwrap(), rmse(&cz, &cgt, None).unwrap()));
        prop_assert!(close(abs_inv(&z, &gt, None).unwrap() / c, abs_inv(&cz, &cgt, None).unwrap()));
    }

    #[test]
    fn pose_inverse_round_trips(
        r in prop::array::uniform3(-1.2f64..1.2),
        t in prop::array::uniform3(-5.0f64..5.0),
        q in prop::array::uniform3(-1.2f64..1.2),
        u in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let a = PoseVector::new(r, t);
        let b = PoseVector::new(q, u);
        let id = a.compose(&a.inverse()).as_array();
        prop_assert!(id.iter().all(|v| v.abs() < 1e-9), "{:?}", id);
        let rel = b.relative_to(&a);
        let back = a.compose(&rel).as_array();
        for (x, y) in back.iter().zip(b.as_array()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn rendered_depth_stays_in_range() {
    let (h, w) = (8, 8);
    let intr = Intrinsics::for_size(h, w);
    for seed in 0..1000u64 {
        let difficulty = [Difficulty::Easy, Difficulty::Textured, Difficulty::Cluttered][seed as usize % 3];
        let scene = generate_scene(seed, difficulty);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = PoseVector::new(
            [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
            [rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0)],
        );
        let (_, depth) = render_frame(&scene, &pose, &intr, h, w).unwrap();
        for &d in &depth.data {
            assert!((MIN_SURFACE_DEPTH as f32..=MAX_SURFACE_DEPTH as f32).contains(&d), "seed {seed}: depth {d}");
        }
    }
}
