//! Windowed training, evaluation, ablation, and checkpoints.

mod ablate;
mod checkpoint;
mod config;
mod eval;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablate::{ablate, AblationRow, AblationTable};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::{model_kv, parse_model_kv, DataConfig, TrainConfig};
pub use eval::{evaluate, ConstantPredictor, EvalMode, EvalOptions, EvalReport, GroundTruthPredictor, ModelPredictor, Predictor};

use crate::error::{Error, Result};
use crate::losses::{depth_loss_node, grad_loss_node, pose_loss_nodes, total_loss, usable_steps, LossComponents, LossWeights};
use crate::network::Model;
use crate::pose::PoseVector;
use crate::synthdata::{derive_seed, generate_dataset, read_dataset, SequenceSample};
use crate::tensor::{AdamState, Graph, Real, Tensor};

/// Windows of length `n` starting at `0, stride, 2·stride, …`, each with
/// poses re-referenced to its own first frame.
pub fn make_windows(seq: &SequenceSample, n: usize, stride: usize) -> Result<Vec<SequenceSample>> {
    if n == 0 || stride == 0 {
        return Err(Error::Contract("window length and stride must be positive".into()));
    }
    if seq.len() < n {
        return Err(Error::Contract(format!(
            "sequence of {} frames is shorter than the window length {n}",
            seq.len()
        )));
    }
    (0..=seq.len() - n).step_by(stride).map(|s| seq.window(s, n)).collect()
}

/// Split sequences by index parity: even indices train, odd indices are held out.
pub fn split_by_parity(seqs: Vec<SequenceSample>) -> (Vec<SequenceSample>, Vec<SequenceSample>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, s) in seqs.into_iter().enumerate() {
        if i % 2 == 0 {
            train.push(s);
        } else {
            held.push(s);
        }
    }
    (train, held)
}

/// Read `data.root`, or render the configured synthetic set.
pub fn load_sequences(config: &TrainConfig, threads: usize) -> Result<Vec<SequenceSample>> {
    match &config.data.root {
        Some(root) => read_dataset(root),
        None => generate_dataset(&config.dataset_spec(), threads),
    }
}

/// A window converted to network inputs and loss targets.
#[derive(Debug, Clone)]
pub struct TrainWindow<T> {
    pub frames: Vec<Tensor<T>>,
    pub disparity: Vec<Vec<T>>,
    pub poses: Vec<PoseVector>,
    pub height: usize,
    pub width: usize,
}

impl<T: Real> TrainWindow<T> {
    pub fn from_sample(w: &SequenceSample) -> Self {
        Self {
            frames: w.frames.iter().map(|f| f.to_tensor()).collect(),
            disparity: w
                .depths
                .iter()
                .map(|d| d.data.iter().map(|&z| T::lit(1.0 / z as f64)).collect())
                .collect(),
            poses: w.poses.clone(),
            height: w.height(),
            width: w.width(),
        }
    }
}

/// Loss of one window and the gradient of its weighted total.
#[derive(Debug, Clone)]
pub struct WindowLoss<T> {
    pub components: LossComponents,
    pub total: f64,
    pub grads: BTreeMap<String, Vec<T>>,
}

/// Unrolls the model over the window from the zero state and sums every
/// loss term over all frames.
pub fn window_loss<T: Real>(model: &Model<T>, window: &TrainWindow<T>, weights: &LossWeights) -> Result<WindowLoss<T>> {
    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let mut state = model.bind_state(&mut g, &model.zero_state())?;
    let steps = usable_steps(window.height, window.width);
    let mut terms = Vec::with_capacity(4 * window.frames.len());
    let mut c = LossComponents::default();
    for t in 0..window.frames.len() {
        let frame = g.constant(&window.frames[t]);
        let out = model.step_graph(&mut g, &params, frame, &state)?;
        let d = depth_loss_node(&mut g, out.disparity, &window.disparity[t], None)?;
        let gr = grad_loss_node(&mut g, out.disparity, &window.disparity[t], &steps)?;
        let (r, tr) = pose_loss_nodes(&mut g, out.pose, &window.poses[t])?;
        c.depth += g.scalar(d).to_f64_lossy();
        c.grad += g.scalar(gr).to_f64_lossy();
        c.rot += g.scalar(r).to_f64_lossy();
        c.trans += g.scalar(tr).to_f64_lossy();
        terms.extend([
            (d, T::lit(weights.depth)),
            (gr, T::lit(weights.grad)),
            (r, T::lit(weights.rot)),
            (tr, T::lit(weights.trans)),
        ]);
        state = out.state;
    }
    let total = total_loss(&c, weights)?;
    let loss = g.weighted_sum(&terms)?;
    let grads = g.backward(loss)?.into_named();
    Ok(WindowLoss {
        components: c,
        total,
        grads,
    })
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut BTreeMap<String, Vec<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flatten()
        .map(|g| {
            let v = g.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = T::lit(max_norm / norm);
        grads.values_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub components: LossComponents,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,lr,L_depth,L_grad,L_rot,L_trans,total,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let c = &r.components;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.3}",
                r.step, r.lr, c.depth, c.grad, c.rot, c.trans, r.total, r.seconds
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Steps at which gradient clipping was active.
    pub clipped_steps: Vec<u64>,
}

/// Index of the training window used at `step`. Each epoch is a fresh
/// permutation drawn from `(seed, epoch)`, so the order is a pure function
/// of the step and resuming needs nothing else.
pub fn window_index(seed: u64, step: u64, count: usize) -> usize {
    let epoch = step / count as u64;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
    order[(step % count as u64) as usize]
}

pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// Freshly initialized model and optimizer for `config`.
pub fn initial_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    let model = Model::build(config.variant, &config.model, config.seed)?;
    let adam = AdamState::new(config.adam, model.params());
    Ok(Checkpoint { model, adam })
}

/// Train from scratch on the even-indexed sequences of `sequences`.
pub fn train(config: &TrainConfig, sequences: &[SequenceSample], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    resume(config, sequences, initial_checkpoint(config)?, out_dir)
}

/// Continue training `start` until `config.max_steps` completed updates.
pub fn resume(config: &TrainConfig, sequences: &[SequenceSample], start: Checkpoint, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if start.model.variant() != config.variant || start.model.config() != &config.model {
        return Err(Error::Load("checkpoint model does not match the configuration".into()));
    }
    let n = config.model.window;
    let training: Vec<&SequenceSample> = sequences.iter().step_by(2).collect();
    let mut windows = Vec::new();
    for seq in &training {
        if seq.height() != config.model.height || seq.width() != config.model.width {
            return Err(Error::Config(format!(
                "data is {}x{}, model expects {}x{}",
                seq.height(),
                seq.width(),
                config.model.height,
                config.model.width
            )));
        }
        windows.extend(make_windows(seq, n, config.window_stride)?);
    }
    if config.max_steps > start.step() && windows.is_empty() {
        return Err(Error::Contract("no training windows".into()));
    }
    let windows: Vec<TrainWindow<f32>> = windows.iter().map(TrainWindow::from_sample).collect();

    let save = |ck: &Checkpoint, name: &str| -> Result<Option<PathBuf>> {
        match out_dir {
            Some(dir) => {
                let path = dir.join(name);
                save_checkpoint(&ck.model, &ck.adam, &path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut ck = start;
    let mut log = TrainLog::default();
    let mut clipped_steps = Vec::new();
    let clock = Instant::now();
    while ck.step() < config.max_steps {
        let step = ck.step();
        let window = &windows[window_index(config.seed, step, windows.len())];
        let result = window_loss(&ck.model, window, &config.loss).and_then(|mut wl| {
            if !wl.total.is_finite() {
                return Err(Error::Numeric(format!("total loss is {} at step {step}", wl.total)));
            }
            let norm = clip_gradients(&mut wl.grads, config.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("gradient norm is {norm} at step {step}")));
            }
            Ok((wl, norm))
        });
        let (wl, norm) = match result {
            Ok(v) => v,
            Err(e @ Error::Numeric(_)) => {
                log::error!("aborting at step {step}: {e}");
                if let Some(p) = save(&ck, LAST_GOOD_CHECKPOINT)? {
                    log::error!("last good parameters kept in {}", p.display());
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if norm > config.clip_norm {
            log::debug!("step {step}: gradient norm {norm:.3e} clipped to {}", config.clip_norm);
            clipped_steps.push(step);
        }
        let lr = ck.adam.effective_lr();
        let mut next = ck.clone();
        if let Err(e) = next.adam.update(next.model.params_mut(), &wl.grads) {
            log::error!("aborting at step {step}: {e}");
            save(&ck, LAST_GOOD_CHECKPOINT)?;
            return Err(e);
        }
        ck = next;
        log.records.push(LogRecord {
            step,
            lr,
            components: wl.components,
            total: wl.total,
            seconds: clock.elapsed().as_secs_f64(),
        });
        let done = ck.step();
        if config.log_interval > 0 && done % config.log_interval == 0 {
            log::info!(
                "step {done}/{}: total {:.4e} (depth {:.3e}, grad {:.3e}, rot {:.3e}, trans {:.3e}), lr {lr:.2e}, {} clipped so far",
                config.max_steps,
                wl.total,
                wl.components.depth,
                wl.components.grad,
                wl.components.rot,
                wl.components.trans,
                clipped_steps.len()
            );
        }
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            save(&ck, LATEST_CHECKPOINT)?;
        }
    }
    if !clipped_steps.is_empty() {
        log::info!("gradient clipping was active on {} of {} steps", clipped_steps.len(), log.records.len());
    }
    save(&ck, FINAL_CHECKPOINT)?;
    if let Some(dir) = out_dir {
        let path = dir.join("train_log.csv");
        std::fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        clipped_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::synthdata::{render_sequence, Difficulty};

    #[test]
    fn window_counts() {
        let seq = render_sequence(1, Difficulty::Easy, 25, 8, 8, 1.0).unwrap();
        assert_eq!(make_windows(&seq.window(0, 10).unwrap(), 10, 5).unwrap().len(), 1);
        let w = make_windows(&seq, 10, 5).unwrap();
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|w| w.poses[0].is_identity()));
        assert_eq!(w[3].frames[0], seq.frames[15]);
        assert!(matches!(make_windows(&seq, 26, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn window_order_is_a_permutation_per_epoch() {
        let mut seen: Vec<usize> = (0..7).map(|s| window_index(3, 14 + s, 7)).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                height: 16,
                width: 16,
                encoder_channels: vec![4, 6, 8],
                decoder_channels: vec![3, 4, 6],
                pose_hidden: 6,
                window: 3,
                ..ModelConfig::default()
            },
            max_steps: 6,
            window_stride: 2,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Vec<SequenceSample> {
        (0..3).map(|s| render_sequence(s, Difficulty::Easy, 5, 16, 16, 1.0).unwrap()).collect()
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = TrainConfig {
            max_steps: 0,
            ..tiny_config()
        };
        let out = train(&cfg, &tiny_data(), None).unwrap();
        assert!(out.log.records.is_empty());
        assert_eq!(out.checkpoint, initial_checkpoint(&cfg).unwrap());
    }

    #[test]
    fn logged_total_is_weighted_sum() {
        let out = train(&tiny_config(), &tiny_data(), None).unwrap();
        let w = LossWeights::default();
        for r in &out.log.records {
            let c = &r.components;
            let expect = w.depth * c.depth + w.grad * c.grad + w.rot * c.rot + w.trans * c.trans;
            assert!((r.total - expect).abs() <= 1e-6 * expect.abs());
            assert!((r.lr - 0.0002).abs() < 1e-15);
        }
        assert_eq!(out.log.records.iter().map(|r| r.step).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data();
        let cfg = tiny_config();
        let full = train(&cfg, &data, None).unwrap();
        let half = train(&TrainConfig { max_steps: 4, ..cfg.clone() }, &data, None).unwrap();
        let bytes = encode_checkpoint(&half.checkpoint.model, &half.checkpoint.adam);
        let reloaded = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        let resumed = resume(&cfg, &data, reloaded, None).unwrap();
        assert_eq!(
            encode_checkpoint(&resumed.checkpoint.model, &resumed.checkpoint.adam),
            encode_checkpoint(&full.checkpoint.model, &full.checkpoint.adam)
        );
    }
}
