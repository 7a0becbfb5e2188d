use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Nearest and farthest depth any surface may have.
pub const MIN_SURFACE_DEPTH: f64 = 0.2;
pub const MAX_SURFACE_DEPTH: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Textured,
    Cluttered,
}

impl Difficulty {
    pub fn min_primitives(self) -> usize {
        match self {
            Difficulty::Easy => 3,
            Difficulty::Textured => 6,
            Difficulty::Cluttered => 12,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Textured => "textured",
            Difficulty::Cluttered => "cluttered",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "textured" => Ok(Difficulty::Textured),
            "cluttered" => Ok(Difficulty::Cluttered),
            _ => Err(Error::Config(format!("unknown difficulty {s:?}"))),
        }
    }
}

/// Solid procedural texture evaluated at world positions, so a surface point
/// has the same color from every viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub accent: [f64; 3],
    /// Spatial frequency in cycles per scene unit, per axis.
    pub frequency: [f64; 3],
    pub phase: [f64; 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut color = || -> [f64; 3] { [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)] };
        let base = color();
        let mut accent = color();
        // Keep contrast so the pattern is visible.
        if (0..3).map(|k| (base[k] - accent[k]).abs()).sum::<f64>() < 0.6 {
            accent = base.map(|v| 1.0 - v);
        }
        let f = rng.gen_range(0.6..1.4);
        Self {
            base,
            accent,
            frequency: [f * rng.gen_range(0.8..1.25), f * rng.gen_range(0.8..1.25), f * rng.gen_range(0.8..1.25)],
            phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
        }
    }

    pub fn color_at(&self, p: &Vector3<f64>) -> [f64; 3] {
        let wave = |k: usize| (TAU * self.frequency[k] * p[k] + self.phase[k]).sin();
        let s = wave(0) + wave(1) + wave(2);
        let t = 0.5 + 0.5 * (1.2 * s).tanh();
        std::array::from_fn(|k| self.base[k] * (1.0 - t) + self.accent[k] * t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle `center + a·u_axis + b·v_axis` with `|a| ≤ half_u`, `|b| ≤ half_v`.
    Rect {
        center: Vector3<f64>,
        u_axis: Vector3<f64>,
        v_axis: Vector3<f64>,
        half_u: f64,
        half_v: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl Shape {
    /// Ray parameter and outward unit normal of the nearest hit with `s > 1e-9`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Rect {
                center,
                u_axis,
                v_axis,
                half_u,
                half_v,
            } => {
                let normal = u_axis.cross(v_axis);
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = normal.dot(&(center - origin)) / denom;
                if s <= 1e-9 {
                    return None;
                }
                let rel = origin + dir * s - center;
                if rel.dot(u_axis).abs() > *half_u || rel.dot(v_axis).abs() > *half_v {
                    return None;
                }
                let n = if denom > 0.0 { -normal } else { normal };
                Some((s, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                let s = [(-b - root) / a, (-b + root) / a].into_iter().find(|&s| s > 1e-9)?;
                let n = (origin + dir * s - center) / *radius;
                Some((s, n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

/// Static scene in the coordinate frame of the first camera
/// (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Depth reported for rays that miss every primitive.
    pub background_depth: f64,
    pub background_color: [f64; 3],
    /// Unit vector pointing towards the light.
    pub light_dir: Vector3<f64>,
    pub ambient: f64,
}

fn rect(center: Vector3<f64>, u_axis: Vector3<f64>, v_axis: Vector3<f64>, half_u: f64, half_v: f64, rng: &mut ChaCha8Rng) -> Primitive {
    Primitive {
        shape: Shape::Rect {
            center,
            u_axis,
            v_axis,
            half_u,
            half_v,
        },
        texture: Texture::random(rng),
    }
}

/// A room: floor, back wall, optional side walls, and objects standing in between.
pub fn generate_scene(seed: u64, difficulty: Difficulty) -> Scene {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let floor_y = rng.gen_range(0.9..1.4);
    let wall_z = rng.gen_range(7.0..12.0);
    let (x_axis, y_axis, z_axis) = (Vector3::x(), Vector3::y(), Vector3::z());
    let mut primitives = vec![
        rect(Vector3::new(0.0, floor_y, wall_z / 2.0), x_axis, z_axis, 14.0, wall_z / 2.0 + 5.0, rng),
        rect(Vector3::new(0.0, floor_y - 7.0, wall_z), x_axis, y_axis, 14.0, 7.0, rng),
    ];
    if difficulty != Difficulty::Easy {
        for side in [-1.0, 1.0] {
            let x = side * rng.gen_range(2.8..4.5);
            primitives.push(rect(Vector3::new(x, floor_y - 7.0, wall_z / 2.0), z_axis, y_axis, wall_z / 2.0 + 5.0, 7.0, rng));
        }
    }
    let objects = match difficulty {
        Difficulty::Easy => rng.gen_range(1..=3),
        Difficulty::Textured => rng.gen_range(3..=5),
        Difficulty::Cluttered => rng.gen_range(8..=12),
    };
    for _ in 0..objects {
        let z = rng.gen_range(3.0..wall_z - 1.0);
        let x = rng.gen_range(-0.45..0.45) * z;
        if rng.gen_bool(0.5) {
            let radius = rng.gen_range(0.25..0.8);
            let y = if rng.gen_bool(0.7) {
                floor_y - radius
            } else {
                rng.gen_range(-0.5..floor_y - radius)
            };
            primitives.push(Primitive {
                shape: Shape::Sphere {
                    center: Vector3::new(x, y, z),
                    radius,
                },
                texture: Texture::random(rng),
            });
        } else {
            let half_w = rng.gen_range(0.25..0.9);
            let half_h = rng.gen_range(0.3..1.0);
            let yaw: f64 = rng.gen_range(-0.6..0.6);
            let u = Vector3::new(yaw.cos(), 0.0, yaw.sin());
            primitives.push(rect(Vector3::new(x, floor_y - half_h, z), u, y_axis, half_w, half_h, rng));
        }
    }
    let light = Vector3::new(rng.gen_range(-0.5..0.5), -1.0, rng.gen_range(-0.8..-0.2));
    Scene {
        primitives,
        background_depth: MAX_SURFACE_DEPTH,
        background_color: [0.5, 0.55, 0.6],
        light_dir: light.normalize(),
        ambient: 0.35,
    }
}

impl Scene {
    /// Nearest intersection: ray parameter, primitive index, normal.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((s, n)) = p.shape.intersect(origin, dir) {
                if best.as_ref().is_none_or(|b| s < b.0) {
                    best = Some((s, i, n));
                }
            }
        }
        best
    }

    /// Lambertian shading of a hit under the fixed directional light.
    pub fn shade(&self, index: usize, point: &Vector3<f64>, normal: &Vector3<f64>) -> [f64; 3] {
        let albedo = self.primitives[index].texture.color_at(point);
        let lambert = normal.dot(&self.light_dir).max(0.0);
        let k = self.ambient + (1.0 - self.ambient) * lambert;
        albedo.map(|a| (a * k).clamp(0.0, 1.0))
    }
}
