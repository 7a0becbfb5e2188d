//! Procedural video sequences with exact depth and camera poses.

mod io;
mod render;
mod scene;
mod trajectory;

use std::thread;

pub use io::{decode_intrinsics, decode_pfm, decode_poses, encode_pfm, encode_poses, read_dataset, read_sequence, sequence_dir, write_dataset};
pub use render::{photometric_error, render_frame, warp_frame, DepthMap, Image, Intrinsics};
pub use scene::{generate_scene, Difficulty, Primitive, Scene, Shape, Texture, MAX_SURFACE_DEPTH, MIN_SURFACE_DEPTH};
pub use trajectory::{sample_trajectory, MAX_STEP_ROTATION, MAX_STEP_TRANSLATION};

use crate::error::{Error, Result};
use crate::pose::PoseVector;

/// Frames of one camera path through one scene. Poses are relative to frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub frames: Vec<Image>,
    pub depths: Vec<DepthMap>,
    pub poses: Vec<PoseVector>,
    pub intrinsics: Intrinsics,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 || self.depths.len() != n || self.poses.len() != n {
            return Err(Error::Contract(format!(
                "sequence lists differ: {n} frames, {} depths, {} poses",
                self.depths.len(),
                self.poses.len()
            )));
        }
        let (h, w) = (self.height(), self.width());
        if self.frames.iter().any(|f| f.height != h || f.width != w)
            || self.depths.iter().any(|d| d.height != h || d.width != w)
        {
            return Err(Error::Dimension("frames and depth maps must share one size".into()));
        }
        if self.depths.iter().flat_map(|d| &d.data).any(|&z| !(z > 0.0 && z.is_finite())) {
            return Err(Error::Domain("depths must be positive and finite".into()));
        }
        self.intrinsics.validate(h, w)
    }

    /// The same frames re-referenced so that frame `start` becomes the origin.
    pub fn window(&self, start: usize, len: usize) -> Result<SequenceSample> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Contract(format!(
                "window [{start}, {}) outside a sequence of {} frames",
                start + len,
                self.len()
            )));
        }
        let origin = self.poses[start];
        Ok(SequenceSample {
            frames: self.frames[start..start + len].to_vec(),
            depths: self.depths[start..start + len].to_vec(),
            // Frame 0 is the origin by definition; skip the round-off of p⁻¹∘p.
            poses: std::iter::once(PoseVector::identity())
                .chain(self.poses[start + 1..start + len].iter().map(|p| p.relative_to(&origin)))
                .collect(),
            intrinsics: self.intrinsics,
        })
    }
}

/// SplitMix64 finalizer; gives independent seeds for numbered sub-streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Render one sequence. Colors are quantized to 8 bits so the in-memory
/// sample equals what a PNG round trip produces.
pub fn render_sequence(seed: u64, difficulty: Difficulty, frames: usize, height: usize, width: usize, motion_scale: f64) -> Result<SequenceSample> {
    if frames == 0 {
        return Err(Error::Contract("a sequence needs at least one frame".into()));
    }
    let scene = generate_scene(derive_seed(seed, 0), difficulty);
    let poses = sample_trajectory(derive_seed(seed, 1), frames, motion_scale);
    let intrinsics = Intrinsics::for_size(height, width);
    let mut images = Vec::with_capacity(frames);
    let mut depths = Vec::with_capacity(frames);
    for pose in &poses {
        let (img, depth) = render_frame(&scene, pose, &intrinsics, height, width)?;
        images.push(img.quantized());
        depths.push(depth);
    }
    Ok(SequenceSample {
        frames: images,
        depths,
        poses,
        intrinsics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub difficulty: Difficulty,
    pub motion_scale: f64,
}

impl DatasetSpec {
    pub fn sequence_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, 1000 + index as u64)
    }
}

/// Render every sequence of `spec`. Work is split across `threads` workers;
/// each sequence depends only on its own seed, so the result does not
/// depend on scheduling.
pub fn generate_dataset(spec: &DatasetSpec, threads: usize) -> Result<Vec<SequenceSample>> {
    let render = |i: usize| render_sequence(spec.sequence_seed(i), spec.difficulty, spec.frames, spec.height, spec.width, spec.motion_scale);
    let threads = threads.clamp(1, spec.sequences.max(1));
    if threads == 1 {
        return (0..spec.sequences).map(render).collect();
    }
    let mut slots: Vec<Option<Result<SequenceSample>>> = (0..spec.sequences).map(|_| None).collect();
    thread::scope(|s| {
        for (t, chunk) in slots.chunks_mut(spec.sequences.div_ceil(threads)).enumerate() {
            let base = t * spec.sequences.div_ceil(threads);
            let render = &render;
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(render(base + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot rendered")).collect()
}
