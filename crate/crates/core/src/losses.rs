//! Training losses: point-wise L1 on disparity, a scale-normalized multi-step
//! gradient loss, and separate L2 losses on rotation and translation.
//!
//! Each loss comes in two flavours: a value-level function on
//! [`DisparityMap`]s / [`PoseVector`]s, and a per-frame kernel returning the
//! value together with its gradient, which the graph helpers at the bottom of
//! this module splice into a [`Graph`] as a single scalar node.

use std::sync::Mutex;

use log::warn;

use crate::error::{Error, Result};
use crate::pose::PoseVector;
use crate::tensor::{Graph, Real, Var};

/// Step sizes of the multi-scale gradient loss.
pub const GRADIENT_STEPS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub depth: f64,
    pub grad: f64,
    pub rot: f64,
    pub trans: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 500.0,
            grad: 1000.0,
            rot: 500.0,
            trans: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.depth, self.grad, self.rot, self.trans];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be positive, got {self:?}")))
        }
    }
}

/// Per-pixel inverse depth, row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap<T = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> DisparityMap<T> {
    /// Fails unless every value is finite and strictly positive.
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height * width != data.len() || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "disparity map {height}x{width} with {} values",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v > T::zero())) {
            return Err(Error::Domain(format!("disparity value {bad} is not positive and finite")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Disparity of a depth map, `ξ = 1/z`.
    pub fn from_depth(height: usize, width: usize, depth: &[T]) -> Result<Self> {
        Self::new(height, width, depth.iter().map(|z| T::one() / *z).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    pub fn to_depth(&self) -> Vec<T> {
        self.data.iter().map(|v| T::one() / *v).collect()
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.height, self.width, self.data.iter().map(|v| *v * c).collect())
    }
}

fn check_pairs<T: Real>(pred: &[DisparityMap<T>], gt: &[DisparityMap<T>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if (p.height, p.width) != (g.height, g.width) {
            return Err(Error::Dimension(format!(
                "frame {t}: prediction {}x{} vs ground truth {}x{}",
                p.height, p.width, g.height, g.width
            )));
        }
    }
    Ok(())
}

/// Σₜ Σᵢⱼ |ξ − ξ̂| over all frames.
pub fn depth_loss<T: Real>(pred: &[DisparityMap<T>], gt: &[DisparityMap<T>]) -> Result<T> {
    check_pairs(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| depth_loss_frame(&p.data, &g.data, None).0)
        .sum())
}

/// One frame of the L1 disparity loss and its gradient w.r.t. `pred`.
/// Pixels where `mask` is false are ignored; ties get a zero subgradient.
pub fn depth_loss_frame<T: Real>(pred: &[T], gt: &[T], mask: Option<&[bool]>) -> (T, Vec<T>) {
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let d = p - g;
        total += d.abs();
        grad[i] = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
    }
    (total, grad)
}

/// Scale-normalized forward differences of a disparity map at one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    pub height: usize,
    pub width: usize,
    pub step: usize,
    /// First component, `(ξ(i+h,j) − ξ(i,j)) / (|ξ(i+h,j)| + |ξ(i,j)|)`; valid where `i + h < height`.
    pub along_rows: Vec<T>,
    /// Second component, the same along `j`; valid where `j + h < width`.
    pub along_cols: Vec<T>,
}

impl<T: Real> GradientField<T> {
    pub fn get(&self, i: usize, j: usize) -> (Option<T>, Option<T>) {
        let k = i * self.width + j;
        let r = (i + self.step < self.height).then(|| self.along_rows[k]);
        let c = (j + self.step < self.width).then(|| self.along_cols[k]);
        (r, c)
    }
}

fn normalized_diff<T: Real>(next: T, here: T) -> T {
    let den = next.abs() + here.abs();
    if den > T::zero() {
        (next - here) / den
    } else {
        T::zero()
    }
}

/// Partial derivatives of [`normalized_diff`] w.r.t. `next` and `here`.
fn normalized_diff_partials<T: Real>(next: T, here: T) -> (T, T) {
    let den = next.abs() + here.abs();
    if den <= T::zero() {
        return (T::zero(), T::zero());
    }
    let num = next - here;
    let den2 = den * den;
    (
        (den - num * next.signum()) / den2,
        (-den - num * here.signum()) / den2,
    )
}

pub fn normalized_gradient<T: Real>(xi: &DisparityMap<T>, step: usize) -> Result<GradientField<T>> {
    let (h, w) = (xi.height, xi.width);
    if step == 0 || step >= h.min(w) {
        return Err(Error::Contract(format!(
            "gradient step {step} must lie in 1..{} for a {h}x{w} map",
            h.min(w)
        )));
    }
    let mut along_rows = vec![T::zero(); h * w];
    let mut along_cols = vec![T::zero(); h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if i + step < h {
                along_rows[k] = normalized_diff(xi.data[k + step * w], xi.data[k]);
            }
            if j + step < w {
                along_cols[k] = normalized_diff(xi.data[k + step], xi.data[k]);
            }
        }
    }
    Ok(GradientField {
        height: h,
        width: w,
        step,
        along_rows,
        along_cols,
    })
}

/// Gradient steps usable on an `height × width` map.
pub fn usable_steps(height: usize, width: usize) -> Vec<usize> {
    let steps: Vec<usize> = GRADIENT_STEPS
        .iter()
        .copied()
        .filter(|&s| s < height.min(width))
        .collect();
    static WARNED: Mutex<Vec<(usize, usize)>> = Mutex::new(Vec::new());
    let mut warned = WARNED.lock().unwrap_or_else(|e| e.into_inner());
    if steps.len() < GRADIENT_STEPS.len() && !warned.contains(&(height, width)) {
        warned.push((height, width));
        warn!(
            "{height}x{width} maps are too small for gradient steps {:?}; using {steps:?}",
            &GRADIENT_STEPS[steps.len()..]
        );
    }
    steps
}

/// Σₜ Σₕ Σᵢⱼ ‖g_h(ξ) − g_h(ξ̂)‖₂ over positions where at least one component is defined.
pub fn grad_loss<T: Real>(pred: &[DisparityMap<T>], gt: &[DisparityMap<T>]) -> Result<T> {
    check_pairs(pred, gt)?;
    let Some(first) = pred.first() else {
        return Ok(T::zero());
    };
    let steps = usable_steps(first.height, first.width);
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| grad_loss_frame(&p.data, &g.data, p.height, p.width, &steps).0)
        .sum())
}

/// One frame of the gradient loss and its gradient w.r.t. `pred`.
pub fn grad_loss_frame<T: Real>(pred: &[T], gt: &[T], height: usize, width: usize, steps: &[usize]) -> (T, Vec<T>) {
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for &h in steps {
        for i in 0..height {
            for j in 0..width {
                let k = i * width + j;
                let down = (i + h < height).then_some(k + h * width);
                let right = (j + h < width).then_some(k + h);
                if down.is_none() && right.is_none() {
                    continue;
                }
                let residual = |n: Option<usize>| {
                    n.map_or(T::zero(), |n| {
                        normalized_diff(pred[n], pred[k]) - normalized_diff(gt[n], gt[k])
                    })
                };
                let (dr, dc) = (residual(down), residual(right));
                let norm = (dr * dr + dc * dc).sqrt();
                total += norm;
                if norm <= T::zero() {
                    continue;
                }
                for (n, d) in [(down, dr), (right, dc)] {
                    if let Some(n) = n {
                        let (d_next, d_here) = normalized_diff_partials(pred[n], pred[k]);
                        let outer = d / norm;
                        grad[n] += outer * d_next;
                        grad[k] += outer * d_here;
                    }
                }
            }
        }
    }
    (total, grad)
}

/// `(Σₜ ‖rₜ − r̂ₜ‖₂, Σₜ ‖tₜ − t̂ₜ‖₂)`.
pub fn pose_loss(pred: &[PoseVector], gt: &[PoseVector]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted poses vs {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).fold((0.0, 0.0), |(r, t), (p, g)| {
        let f = pose_loss_frame(&p.as_array(), &g.as_array());
        (r + f.rot, t + f.trans)
    }))
}

/// Rotation and translation losses of one frame with gradients w.r.t. the
/// predicted `[rx, ry, rz, tx, ty, tz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrameLoss<T> {
    pub rot: T,
    pub trans: T,
    pub rot_grad: Vec<T>,
    pub trans_grad: Vec<T>,
}

pub fn pose_loss_frame<T: Real>(pred: &[T], gt: &[T]) -> PoseFrameLoss<T> {
    let mut out = PoseFrameLoss {
        rot: T::zero(),
        trans: T::zero(),
        rot_grad: vec![T::zero(); 6],
        trans_grad: vec![T::zero(); 6],
    };
    for (range, value, grad) in [
        (0..3, &mut out.rot, &mut out.rot_grad),
        (3..6, &mut out.trans, &mut out.trans_grad),
    ] {
        let norm = range
            .clone()
            .map(|k| (pred[k] - gt[k]) * (pred[k] - gt[k]))
            .sum::<T>()
            .sqrt();
        *value = norm;
        if norm > T::zero() {
            for k in range {
                grad[k] = (pred[k] - gt[k]) / norm;
            }
        }
    }
    out
}

/// The four loss terms of one window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub depth: f64,
    pub grad: f64,
    pub rot: f64,
    pub trans: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("L_depth", c.depth),
        ("L_grad", c.grad),
        ("L_rot", c.rot),
        ("L_trans", c.trans),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss component {name} is {v}")));
        }
    }
    Ok(w.depth * c.depth + w.grad * c.grad + w.rot * c.rot + w.trans * c.trans)
}

/// Depth loss of one predicted disparity node against a fixed target.
pub fn depth_loss_node<T: Real>(g: &mut Graph<T>, pred: Var, gt: &[T], mask: Option<&[bool]>) -> Result<Var> {
    if g.value(pred).len() != gt.len() {
        return Err(Error::Dimension("depth loss: prediction and target sizes differ".into()));
    }
    let (value, grad) = depth_loss_frame(g.value(pred), gt, mask);
    g.scalar_fn(&[pred], value, vec![grad])
}

/// Gradient loss of one `[1, H, W]` disparity node against a fixed target.
pub fn grad_loss_node<T: Real>(g: &mut Graph<T>, pred: Var, gt: &[T], steps: &[usize]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 3 || shape[0] != 1 || g.value(pred).len() != gt.len() {
        return Err(Error::Dimension(format!("gradient loss on node of shape {shape:?}")));
    }
    let (value, grad) = grad_loss_frame(g.value(pred), gt, shape[1], shape[2], steps);
    g.scalar_fn(&[pred], value, vec![grad])
}

/// Rotation and translation loss nodes for one `[6]` pose node.
pub fn pose_loss_nodes<T: Real>(g: &mut Graph<T>, pred: Var, gt: &PoseVector) -> Result<(Var, Var)> {
    if g.shape(pred) != [6] {
        return Err(Error::Dimension(format!("pose node of shape {:?}", g.shape(pred))));
    }
    let target: Vec<T> = gt.as_array().iter().map(|v| T::lit(*v)).collect();
    let f = pose_loss_frame(g.value(pred), &target);
    let rot = g.scalar_fn(&[pred], f.rot, vec![f.rot_grad])?;
    let trans = g.scalar_fn(&[pred], f.trans, vec![f.trans_grad])?;
    Ok((rot, trans))
}
