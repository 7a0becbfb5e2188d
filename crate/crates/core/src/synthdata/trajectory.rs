use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pose::PoseVector;

/// Per-step rotation budget in radians.
pub const MAX_STEP_ROTATION: f64 = 2.0 * std::f64::consts::PI / 180.0;
/// Per-step translation budget per unit of `motion_scale`.
pub const MAX_STEP_TRANSLATION: f64 = 0.05;

fn clip_norm(v: &mut [f64; 3], max: f64, l1: bool) {
    let n = if l1 {
        v.iter().map(|x| x.abs()).sum::<f64>()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    if n > max {
        let k = max / n;
        v.iter_mut().for_each(|x| *x *= k);
    }
}

/// Smooth camera path expressed relative to the first frame.
///
/// Velocities follow a low-pass filtered random walk around a per-sequence
/// heading that mostly points forward. Euler increments are clipped in L1,
/// which bounds the geodesic angle between consecutive rotations.
pub fn sample_trajectory(seed: u64, n: usize, motion_scale: f64) -> Vec<PoseVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = motion_scale.max(0.0);
    let max_t = MAX_STEP_TRANSLATION * scale * 0.98;
    let max_r = MAX_STEP_ROTATION * scale.min(1.0) * 0.98;

    let heading = {
        let h = [rng.gen_range(-0.35..0.35), rng.gen_range(-0.1..0.1), 1.0];
        let len = h.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        h.map(|x| x / len)
    };
    let speed = rng.gen_range(0.3..0.8) * max_t;
    let mut v = heading.map(|x| x * speed);
    let mut w = [0.0; 3];
    let mut pose = PoseVector::identity();
    let mut out = Vec::with_capacity(n);
    if n > 0 {
        out.push(pose);
    }
    let noise = |rng: &mut ChaCha8Rng| -> f64 { rng.gen_range(-1.0f64..1.0).powi(3) };
    for _ in 1..n {
        for k in 0..3 {
            let target = heading[k] * speed + 0.6 * max_t * noise(&mut rng);
            v[k] = 0.85 * v[k] + 0.15 * target;
            w[k] = 0.85 * w[k] + 0.15 * 0.8 * max_r * noise(&mut rng);
        }
        clip_norm(&mut v, max_t, false);
        clip_norm(&mut w, max_r, true);
        for k in 0..3 {
            pose.rotation[k] += w[k];
            pose.translation[k] += v[k];
        }
        out.push(pose);
    }
    out
}
