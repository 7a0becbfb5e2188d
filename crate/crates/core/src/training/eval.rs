use std::fmt;
use std::str::FromStr;

use super::make_windows;
use crate::error::{Error, Result};
use crate::losses::DisparityMap;
use crate::metrics::{evaluate_depth_cap, range_bucketed_sc_inv, MetricReport};
use crate::network::{FrameOutput, Model};
use crate::pose::PoseVector;
use crate::synthdata::SequenceSample;
use crate::tensor::Tensor;

/// Which frames of each window are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Only frame N−1, after the model has seen the whole window.
    LastFrame,
    FullSequence,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::LastFrame => "last_frame",
            EvalMode::FullSequence => "full_sequence",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_frame" => Ok(EvalMode::LastFrame),
            "full_sequence" => Ok(EvalMode::FullSequence),
            _ => Err(Error::Config(format!("unknown eval mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub window: usize,
    /// Ground truth beyond the cap is excluded and both maps are clamped to it.
    pub cap: Option<f64>,
    /// Depth-range bucket edges for the per-range sc_inv table.
    pub buckets: Option<Vec<f64>>,
}

impl EvalOptions {
    pub fn new(mode: EvalMode, window: usize) -> Self {
        Self {
            mode,
            window,
            cap: None,
            buckets: None,
        }
    }
}

/// Anything that maps a window of frames to per-frame disparity and pose.
pub trait Predictor {
    fn predict(&self, window: &SequenceSample) -> Result<Vec<FrameOutput<f64>>>;
}

/// Returns the ground truth; every depth metric is zero.
pub struct GroundTruthPredictor;

impl Predictor for GroundTruthPredictor {
    fn predict(&self, window: &SequenceSample) -> Result<Vec<FrameOutput<f64>>> {
        window
            .depths
            .iter()
            .zip(&window.poses)
            .map(|(d, p)| {
                let data: Vec<f64> = d.data.iter().map(|&z| z as f64).collect();
                Ok(FrameOutput {
                    disparity: DisparityMap::from_depth(d.height, d.width, &data)?,
                    pose: *p,
                })
            })
            .collect()
    }
}

/// Predicts one disparity everywhere and the identity pose.
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, window: &SequenceSample) -> Result<Vec<FrameOutput<f64>>> {
        let (h, w) = (window.height(), window.width());
        (0..window.len())
            .map(|_| {
                Ok(FrameOutput {
                    disparity: DisparityMap::new(h, w, vec![self.0; h * w])?,
                    pose: PoseVector::identity(),
                })
            })
            .collect()
    }
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model<f32>,
    /// When false every frame is predicted from the zero state, so the model
    /// sees no temporal context.
    pub carry_state: bool,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, window: &SequenceSample) -> Result<Vec<FrameOutput<f64>>> {
        let frames: Vec<Tensor<f32>> = window.frames.iter().map(|f| f.to_tensor()).collect();
        let outputs = if self.carry_state {
            self.model.forward_sequence(&frames)?
        } else {
            let zero = self.model.zero_state();
            frames
                .iter()
                .map(|f| self.model.forward_step(f, &zero).map(|(o, _)| o))
                .collect::<Result<Vec<_>>>()?
        };
        outputs
            .into_iter()
            .map(|o| {
                let d = &o.disparity;
                let data = d.data().iter().map(|&v| v as f64).collect();
                Ok(FrameOutput {
                    disparity: DisparityMap::new(d.height(), d.width(), data)?,
                    pose: o.pose,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Per-frame metric average; `n_pixels` is the total scored count.
    pub metrics: MetricReport,
    /// Mean per-frame rotation and translation loss terms.
    pub rot_error: f64,
    pub trans_error: f64,
    /// Mean ground-truth translation magnitude over the scored frames.
    pub trans_magnitude: f64,
    pub frames: usize,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Score `predictor` on windows of length `opts.window` cut back to back from
/// each sequence.
pub fn evaluate(predictor: &dyn Predictor, sequences: &[SequenceSample], opts: &EvalOptions) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::Contract("evaluation needs at least one sequence".into()));
    }
    let mut per_frame = Vec::new();
    let (mut pooled_z, mut pooled_gt, mut pooled_mask) = (Vec::new(), Vec::new(), Vec::new());
    let (mut rot, mut trans, mut mag) = (0.0, 0.0, 0.0);
    for seq in sequences {
        for window in make_windows(seq, opts.window, opts.window)? {
            let preds = predictor.predict(&window)?;
            if preds.len() != window.len() {
                return Err(Error::Contract(format!(
                    "predictor returned {} frames for a window of {}",
                    preds.len(),
                    window.len()
                )));
            }
            let scored = match opts.mode {
                EvalMode::LastFrame => window.len() - 1..window.len(),
                EvalMode::FullSequence => 0..window.len(),
            };
            for t in scored {
                let z = preds[t].disparity.to_depth();
                let gt: Vec<f64> = window.depths[t].data.iter().map(|&v| v as f64).collect();
                let (z, gt, mask) = match opts.cap {
                    Some(cap) => evaluate_depth_cap(&z, &gt, cap),
                    None => {
                        let n = gt.len();
                        (z, gt, vec![true; n])
                    }
                };
                per_frame.push(MetricReport::compute(&z, &gt, Some(&mask))?);
                if opts.buckets.is_some() {
                    pooled_z.extend(z);
                    pooled_gt.extend(gt);
                    pooled_mask.extend(mask);
                }
                let (p, g) = (&preds[t].pose, &window.poses[t]);
                rot += dist(&p.rotation, &g.rotation);
                trans += dist(&p.translation, &g.translation);
                mag += dist(&g.translation, &[0.0; 3]);
            }
        }
    }
    let n = per_frame.len() as f64;
    let mut metrics = MetricReport::average(&per_frame)?;
    if let Some(edges) = &opts.buckets {
        metrics.ranges = Some(range_bucketed_sc_inv(&pooled_z, &pooled_gt, Some(&pooled_mask), edges)?);
    }
    Ok(EvalReport {
        metrics,
        rot_error: rot / n,
        trans_error: trans / n,
        trans_magnitude: mag / n,
        frames: per_frame.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sc_inv;
    use crate::synthdata::{render_sequence, Difficulty};

    fn data() -> Vec<SequenceSample> {
        (0..2).map(|s| render_sequence(s, Difficulty::Textured, 8, 8, 12, 1.0).unwrap()).collect()
    }

    #[test]
    fn ground_truth_scores_zero() {
        let r = evaluate(&GroundTruthPredictor, &data(), &EvalOptions::new(EvalMode::FullSequence, 4)).unwrap();
        let m = &r.metrics;
        assert_eq!(r.frames, 16);
        assert!(m.sc_inv.abs() < 1e-6 && m.abs_rel < 1e-6 && m.abs_inv < 1e-6 && m.rmse < 1e-5 && m.rmse_log < 1e-6);
        assert_eq!(r.trans_error, 0.0);
    }

    #[test]
    fn constant_matches_brute_force() {
        let seqs = data();
        let r = evaluate(&ConstantPredictor(0.3), &seqs, &EvalOptions::new(EvalMode::FullSequence, 4)).unwrap();
        let mut expect = 0.0;
        let mut n = 0.0;
        for s in &seqs {
            for d in &s.depths {
                let gt: Vec<f64> = d.data.iter().map(|&v| v as f64).collect();
                expect += sc_inv(&vec![1.0 / 0.3; gt.len()], &gt, None).unwrap();
                n += 1.0;
            }
        }
        assert!((r.metrics.sc_inv - expect / n).abs() < 1e-12);
    }

    #[test]
    fn last_frame_scores_one_frame_per_window() {
        let r = evaluate(&GroundTruthPredictor, &data(), &EvalOptions::new(EvalMode::LastFrame, 4)).unwrap();
        assert_eq!(r.frames, 4);
    }
}
