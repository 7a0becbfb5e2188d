use nalgebra::Vector3;

use super::scene::{Scene, MAX_SURFACE_DEPTH, MIN_SURFACE_DEPTH};
use crate::error::{Error, Result};
use crate::pose::PoseVector;
use crate::tensor::{Real, Tensor};

/// Pinhole intrinsics. Pixel `(i, j)` (row, column) has its center at
/// `u = j`, `v = i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Centered principal point and a 60° horizontal field of view.
    pub fn for_size(height: usize, width: usize) -> Self {
        let f = 0.5 * width as f64 / (30f64).to_radians().tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Contract(format!("focal lengths must be positive: {self:?}")));
        }
        if self.cx < 0.0 || self.cy < 0.0 || self.cx > (width as f64 - 1.0) || self.cy > (height as f64 - 1.0) {
            return Err(Error::Contract(format!(
                "principal point ({}, {}) outside a {height}x{width} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Camera-frame ray through pixel coordinates `(u, v)`, scaled to unit z.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// RGB image in channel-planar layout `[3, H, W]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    /// Round every value to the nearest of the 256 levels an 8-bit file stores.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
            ..*self
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::new(&[3, self.height, self.width], data).expect("image extents are positive")
    }

    /// Bilinear sample at continuous coordinates inside `[0, W-1] × [0, H-1]`.
    fn sample(&self, c: usize, u: f64, v: f64) -> f64 {
        let (j0, i0) = (u.floor() as usize, v.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(self.width - 1), (i0 + 1).min(self.height - 1));
        let (a, b) = (u - j0 as f64, v - i0 as f64);
        let p = |i, j| self.get(c, i, j) as f64;
        (1.0 - b) * ((1.0 - a) * p(i0, j0) + a * p(i0, j1)) + b * ((1.0 - a) * p(i1, j0) + a * p(i1, j1))
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major map of camera-frame z.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.width + j]
    }
}

/// Sub-pixel offsets used to anti-alias color; depth uses the center ray.
const SUPERSAMPLE: usize = 3;

/// Ray-cast pinhole render of `scene` seen from a camera at `pose`.
pub fn render_frame(scene: &Scene, pose: &PoseVector, intrinsics: &Intrinsics, height: usize, width: usize) -> Result<(Image, DepthMap)> {
    intrinsics.validate(height, width)?;
    let rot = pose.matrix();
    let origin = pose.translation_vector();
    let mut image = Image::zeros(height, width);
    let mut depth = vec![0f32; height * width];
    let weight = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for i in 0..height {
        for j in 0..width {
            let center = intrinsics.ray(j as f64, i as f64);
            let z = match scene.trace(&origin, &(rot * center)) {
                Some((s, _, _)) => s,
                None => scene.background_depth,
            };
            depth[i * width + j] = z.clamp(MIN_SURFACE_DEPTH, MAX_SURFACE_DEPTH) as f32;

            let mut color = [0.0; 3];
            for si in 0..SUPERSAMPLE {
                for sj in 0..SUPERSAMPLE {
                    let du = (sj as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let dv = (si as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let dir = rot * intrinsics.ray(j as f64 + du, i as f64 + dv);
                    let c = match scene.trace(&origin, &dir) {
                        Some((s, idx, n)) => scene.shade(idx, &(origin + dir * s), &n),
                        None => scene.background_color,
                    };
                    for k in 0..3 {
                        color[k] += weight * c[k];
                    }
                }
            }
            for (k, c) in color.iter().enumerate() {
                image.set(k, i, j, *c as f32);
            }
        }
    }
    Ok((
        image,
        DepthMap {
            height,
            width,
            data: depth,
        },
    ))
}

/// Inverse-warp `rgb_s` into the target view.
///
/// `pose_t_to_s` maps target-camera coordinates to source-camera
/// coordinates. Pixels that project behind the source camera or outside its
/// image are masked out and left at zero.
pub fn warp_frame(rgb_s: &Image, depth_t: &DepthMap, pose_t_to_s: &PoseVector, intrinsics: &Intrinsics) -> Result<(Image, Vec<bool>)> {
    let (h, w) = (depth_t.height, depth_t.width);
    if rgb_s.height != h || rgb_s.width != w {
        return Err(Error::Dimension(format!(
            "source image {}x{} vs depth {h}x{w}",
            rgb_s.height, rgb_s.width
        )));
    }
    if depth_t.data.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::Domain("target depth must be positive and finite".into()));
    }
    let mut out = Image::zeros(h, w);
    let mut mask = vec![false; h * w];
    let eps = 1e-9;
    for i in 0..h {
        for j in 0..w {
            let p_t = intrinsics.ray(j as f64, i as f64) * depth_t.at(i, j) as f64;
            let p_s = pose_t_to_s.transform_point(&p_t);
            if p_s.z <= 1e-6 {
                continue;
            }
            let (u, v) = intrinsics.project(&p_s);
            if !(u >= -eps && v >= -eps && u <= w as f64 - 1.0 + eps && v <= h as f64 - 1.0 + eps) {
                continue;
            }
            let (u, v) = (u.clamp(0.0, w as f64 - 1.0), v.clamp(0.0, h as f64 - 1.0));
            mask[i * w + j] = true;
            for c in 0..3 {
                out.set(c, i, j, rgb_s.sample(c, u, v) as f32);
            }
        }
    }
    Ok((out, mask))
}

/// Mean absolute intensity difference over masked pixels and all channels.
pub fn photometric_error(a: &Image, b: &Image, mask: &[bool]) -> Option<f64> {
    let plane = a.height * a.width;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                sum += (a.data[c * plane + p] - b.data[c * plane + p]).abs() as f64;
            }
            count += 3;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::scene::{Primitive, Shape, Texture};

    fn flat_scene(shape: Shape) -> Scene {
        Scene {
            primitives: vec![Primitive {
                shape,
                texture: Texture {
                    base: [0.2, 0.4, 0.6],
                    accent: [0.9, 0.7, 0.1],
                    frequency: [1.3, 0.9, 1.1],
                    phase: [0.1, 0.2, 0.3],
                },
            }],
            background_depth: MAX_SURFACE_DEPTH,
            background_color: [0.5; 3],
            light_dir: Vector3::new(0.0, -0.6, -0.8),
            ambient: 0.4,
        }
    }

    fn wall(d: f64) -> Scene {
        flat_scene(Shape::Rect {
            center: Vector3::new(0.0, 0.0, d),
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            half_u: 100.0,
            half_v: 100.0,
        })
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let k = Intrinsics::for_size(16, 24);
        let (_, depth) = render_frame(&wall(3.5), &PoseVector::identity(), &k, 16, 24).unwrap();
        assert!(depth.data.iter().all(|&d| (d as f64 - 3.5).abs() < 1e-5));
    }

    #[test]
    fn sphere_on_axis_center_depth() {
        // Odd extents put a pixel center on the optical axis.
        let (h, w) = (15, 21);
        let k = Intrinsics::for_size(h, w);
        let scene = flat_scene(Shape::Sphere {
            center: Vector3::new(0.0, 0.0, 6.0),
            radius: 1.25,
        });
        let (_, depth) = render_frame(&scene, &PoseVector::identity(), &k, h, w).unwrap();
        assert!((depth.at(h / 2, w / 2) as f64 - 4.75).abs() < 1e-5);
    }

    #[test]
    fn rendering_is_deterministic() {
        let k = Intrinsics::for_size(8, 12);
        let pose = PoseVector::new([0.01, -0.02, 0.03], [0.1, 0.0, 0.2]);
        let a = render_frame(&wall(2.0), &pose, &k, 8, 12).unwrap();
        let b = render_frame(&wall(2.0), &pose, &k, 8, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let k = Intrinsics::for_size(16, 24);
        let (img, depth) = render_frame(&wall(2.5), &PoseVector::new([0.0, 0.3, 0.0], [0.0; 3]), &k, 16, 24).unwrap();
        let (warped, mask) = warp_frame(&img, &depth, &PoseVector::identity(), &k).unwrap();
        for (p, &m) in mask.iter().enumerate() {
            if m {
                for c in 0..3 {
                    assert!((warped.data[c * 16 * 24 + p] - img.data[c * 16 * 24 + p]).abs() < 1e-6);
                }
            }
        }
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn plane_translation_is_uniform_shift() {
        let (h, w) = (12, 20);
        let k = Intrinsics::for_size(h, w);
        let d = 4.0;
        // Source image whose value is its own column coordinate, so the
        // bilinear sample reveals the projected u exactly.
        let mut src = Image::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                src.set(0, i, j, j as f32);
            }
        }
        let depth = DepthMap {
            height: h,
            width: w,
            data: vec![d as f32; h * w],
        };
        let tx = 0.3;
        let (warped, mask) = warp_frame(&src, &depth, &PoseVector::new([0.0; 3], [tx, 0.0, 0.0]), &k).unwrap();
        let shift = k.fx * tx / d;
        let mut checked = 0;
        for i in 0..h {
            for j in 0..w {
                if mask[i * w + j] {
                    assert!((warped.get(0, i, j) as f64 - (j as f64 + shift)).abs() < 1e-4);
                    checked += 1;
                }
            }
        }
        assert!(checked > h * w / 2);
    }
}
