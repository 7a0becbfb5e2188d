//! U-shaped disparity/pose network with convolutional LSTM blocks, plus the
//! two convolution-only baselines.
//!
//! Encoder: stride-2 convolutions with kernels 7, 5, then 3, the deeper
//! stages followed by a stride-1 refinement convolution. Decoder: stride-2
//! deconvolutions, each concatenated with the encoder map of matching scale
//! (the input frame at full resolution) and fused by a 3×3 convolution.
//! Memory blocks sit at the bottleneck and after the two coarsest decoder
//! stages. Heads: a bounded-sigmoid disparity map at full resolution and a
//! 6-vector pose regressed from the pooled bottleneck.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, Variant};

use crate::error::{Error, Result};
use crate::losses::DisparityMap;
use crate::pose::PoseVector;
use crate::tensor::{Graph, LayerParams, Real, Tensor, Var};

pub use crate::pose::euler_to_matrix;

/// Rotation outputs of the pose head are multiplied by this factor.
pub const ROTATION_OUTPUT_SCALE: f64 = 0.01;

const LSTM_BLOCKS: usize = 3;

/// Network parameters together with the topology they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    variant: Variant,
    params: LayerParams<T>,
}

/// Hidden and cell maps of the three conv-LSTM blocks, plus the frame
/// history a stacked-input model needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub lstm: Vec<(Tensor<T>, Tensor<T>)>,
    pub history: Vec<Tensor<T>>,
}

/// [`RecurrentState`] living on a graph.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub lstm: Vec<(Var, Var)>,
    pub history: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput<T> {
    pub disparity: DisparityMap<T>,
    pub pose: PoseVector,
}

/// Graph nodes produced by one step.
#[derive(Debug, Clone)]
pub struct StepVars {
    /// `[1, H, W]` disparity.
    pub disparity: Var,
    /// `[rx, ry, rz, tx, ty, tz]`.
    pub pose: Var,
    pub state: GraphState,
}

/// Parameter nodes bound onto a graph, in the model's name order.
pub struct BoundParams {
    vars: Vec<(String, Var)>,
}

impl BoundParams {
    fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .binary_search_by(|(n, _)| n.as_str().cmp(name))
            .map(|i| self.vars[i].1)
            .map_err(|_| Error::Contract(format!("model has no parameter {name}")))
    }
}

struct Init<T> {
    params: LayerParams<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<T> {
    /// Fan-in scaled uniform; `gain` 2 for ReLU layers, 1 otherwise.
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<()> {
        let bound = (3.0 * gain / fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, bound, &mut self.rng).with_grad(true);
        self.params.insert(name, t)
    }

    fn bias(&mut self, name: &str, len: usize, value: f64) -> Result<()> {
        self.params
            .insert(name, Tensor::full(&[len], T::lit(value)).with_grad(true))
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, gain: f64) -> Result<()> {
        self.uniform(&format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, gain)?;
        self.bias(&format!("{name}.bias"), cout, 0.0)
    }

    fn deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        // Each output pixel of a stride-2 transpose sees about a quarter of the taps.
        let fan_in = (cin * k * k / 4).max(1);
        self.uniform(&format!("{name}.weight"), &[cin, cout, k, k], fan_in, 2.0)?;
        self.bias(&format!("{name}.bias"), cout, 0.0)
    }

    fn lstm(&mut self, name: &str, cin: usize, hidden: usize) -> Result<()> {
        let fan_in = (cin + hidden) * 9;
        self.uniform(&format!("{name}.weight"), &[4 * hidden, cin + hidden, 3, 3], fan_in, 1.0)?;
        // Forget gate starts open.
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let b = Tensor::new(&[4 * hidden], b.into_iter().map(T::lit).collect())?.with_grad(true);
        self.params.insert(format!("{name}.bias"), b)
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize, gain: f64) -> Result<()> {
        self.uniform(&format!("{name}.weight"), &[out, inp], inp, gain)?;
        self.bias(&format!("{name}.bias"), out, 0.0)
    }
}

fn encoder_kernel(level: usize) -> usize {
    match level {
        1 => 7,
        2 => 5,
        _ => 3,
    }
}

/// Network input channels of a variant.
fn input_channels(variant: Variant, config: &ModelConfig) -> usize {
    match variant {
        Variant::CnnStack => 3 * config.window,
        _ => 3,
    }
}

/// `(name, input channels, hidden channels, level)` of each memory block.
fn memory_blocks(config: &ModelConfig) -> [(String, usize, usize, usize); LSTM_BLOCKS] {
    let d = config.encoder_depth();
    let enc = &config.encoder_channels;
    let dec = &config.decoder_channels;
    [
        ("mem1".to_string(), enc[d - 1], enc[d - 1], d),
        ("mem2".to_string(), dec[d - 1], dec[d - 1], d - 1),
        ("mem3".to_string(), dec[d - 2], dec[d - 2], d - 2),
    ]
}

pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    Model::build(Variant::DenseSlamNet, config, seed)
}

pub fn build_baseline<T: Real>(kind: Variant, config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    if kind == Variant::DenseSlamNet {
        return Err(Error::Contract("baselines are CNN-SINGLE or CNN-STACK".into()));
    }
    Model::build(kind, config, seed)
}

impl<T: Real> Model<T> {
    pub fn build(variant: Variant, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            params: LayerParams::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let depth = config.encoder_depth();
        let enc = &config.encoder_channels;
        let dec = &config.decoder_channels;
        let cin = input_channels(variant, config);

        let mut prev = cin;
        for level in 1..=depth {
            let k = encoder_kernel(level);
            init.conv(&format!("enc{level}.down"), enc[level - 1], prev, k, 2.0)?;
            if level >= 3 {
                init.conv(&format!("enc{level}.refine"), enc[level - 1], enc[level - 1], 3, 2.0)?;
            }
            prev = enc[level - 1];
        }
        let blocks = memory_blocks(config);
        let build_block = |init: &mut Init<T>, (name, cin, hidden, _): &(String, usize, usize, usize)| {
            if variant == Variant::DenseSlamNet {
                init.lstm(name, *cin, *hidden)
            } else {
                init.conv(name, *hidden, *cin, 3, 2.0)
            }
        };
        build_block(&mut init, &blocks[0])?;
        for level in (0..depth).rev() {
            let skip = if level == 0 { cin } else { enc[level - 1] };
            init.deconv(&format!("dec{level}.up"), prev, dec[level], 3)?;
            init.conv(&format!("dec{level}.fuse"), dec[level], dec[level] + skip, 3, 2.0)?;
            prev = dec[level];
            if level == depth - 1 {
                build_block(&mut init, &blocks[1])?;
            } else if level == depth - 2 {
                build_block(&mut init, &blocks[2])?;
            }
        }
        init.conv("disp", 1, dec[0], 3, 1.0)?;
        let unit = (config.disp_init - config.disp_min) / (config.disp_max - config.disp_min);
        init.params.get_mut("disp.bias").unwrap().data_mut()[0] = T::lit((unit / (1.0 - unit)).ln());
        init.linear("pose.fc1", config.pose_hidden, enc[depth - 1], 2.0)?;
        init.linear("pose.fc2", 6, config.pose_hidden, 1.0)?;

        Ok(Self {
            config: config.clone(),
            variant,
            params: init.params,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(variant: Variant, config: &ModelConfig, params: LayerParams<T>) -> Result<Self> {
        let reference = Self::build(variant, config, 0)?;
        let expected: Vec<(&String, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let got: Vec<(&String, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::Load(format!(
                "parameters do not match a {variant} model with config {config:?}"
            )));
        }
        Ok(Self {
            config: config.clone(),
            variant,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &LayerParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LayerParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> LayerParams<T> {
        self.params
    }

    pub fn input_channels(&self) -> usize {
        input_channels(self.variant, &self.config)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            variant: self.variant,
            params: self.params.cast(),
        }
    }

    /// All-zero state for the start of a sequence.
    pub fn zero_state(&self) -> RecurrentState<T> {
        let lstm = if self.variant == Variant::DenseSlamNet {
            memory_blocks(&self.config)
                .iter()
                .map(|(_, _, hidden, level)| {
                    let (h, w) = self.config.extents_at(*level);
                    (Tensor::zeros(&[*hidden, h, w]), Tensor::zeros(&[*hidden, h, w]))
                })
                .collect()
        } else {
            Vec::new()
        };
        RecurrentState {
            lstm,
            history: Vec::new(),
        }
    }

    fn check_state(&self, state: &RecurrentState<T>) -> Result<()> {
        let zero = self.zero_state();
        let lstm_ok = state.lstm.len() == zero.lstm.len()
            && state
                .lstm
                .iter()
                .zip(&zero.lstm)
                .all(|(a, b)| a.0.shape() == b.0.shape() && a.1.shape() == b.1.shape());
        let frame = [3, self.config.height, self.config.width];
        let history_ok = match self.variant {
            Variant::CnnStack => {
                state.history.len() < self.config.window && state.history.iter().all(|f| f.shape() == frame)
            }
            _ => state.history.is_empty(),
        };
        if lstm_ok && history_ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "recurrent state does not match this {} model",
                self.variant
            )))
        }
    }

    /// Places every parameter on `g`, tracking gradients when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    g.param(name, t)
                } else {
                    g.constant(t)
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn bind_state(&self, g: &mut Graph<T>, state: &RecurrentState<T>) -> Result<GraphState> {
        self.check_state(state)?;
        Ok(GraphState {
            lstm: state
                .lstm
                .iter()
                .map(|(h, c)| (g.constant(h), g.constant(c)))
                .collect(),
            history: state.history.iter().map(|f| g.constant(f)).collect(),
        })
    }

    fn conv(&self, g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var, stride: usize, relu: bool) -> Result<Var> {
        let w = p.get(&format!("{name}.weight"))?;
        let b = p.get(&format!("{name}.bias"))?;
        let y = g.conv2d(x, w, b, stride)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Memory block: a conv-LSTM for the recurrent model, a plain ReLU
    /// convolution for the baselines.
    fn memory(&self, g: &mut Graph<T>, p: &BoundParams, index: usize, x: Var, state: &GraphState, next: &mut Vec<(Var, Var)>) -> Result<Var> {
        let name = format!("mem{}", index + 1);
        if self.variant != Variant::DenseSlamNet {
            return self.conv(g, p, &name, x, 1, true);
        }
        let (h, c) = state.lstm[index];
        let w = p.get(&format!("{name}.weight"))?;
        let b = p.get(&format!("{name}.bias"))?;
        let (h_next, c_next) = g.conv_lstm_step(x, h, c, w, b)?;
        next.push((h_next, c_next));
        Ok(h_next)
    }

    /// One time step on `g`. `frame` is an RGB `[3, H, W]` node with values in `[0, 1]`.
    pub fn step_graph(&self, g: &mut Graph<T>, p: &BoundParams, frame: Var, state: &GraphState) -> Result<StepVars> {
        let cfg = &self.config;
        if g.shape(frame) != [3, cfg.height, cfg.width] {
            return Err(Error::Dimension(format!(
                "frame of shape {:?}, model expects [3, {}, {}]",
                g.shape(frame),
                cfg.height,
                cfg.width
            )));
        }
        let depth = cfg.encoder_depth();

        let mut history = state.history.clone();
        let input = match self.variant {
            Variant::CnnStack => {
                let oldest = history.first().copied().unwrap_or(frame);
                let mut stack = vec![oldest; cfg.window - 1 - history.len()];
                stack.extend(&history);
                stack.push(frame);
                history.push(frame);
                if history.len() >= cfg.window {
                    history.remove(0);
                }
                g.concat(&stack)?
            }
            _ => frame,
        };
        let input = g.affine(input, T::one(), T::lit(-0.5));

        let mut skips = vec![input];
        let mut x = input;
        for level in 1..=depth {
            x = self.conv(g, p, &format!("enc{level}.down"), x, 2, true)?;
            if level >= 3 {
                x = self.conv(g, p, &format!("enc{level}.refine"), x, 1, true)?;
            }
            skips.push(x);
        }

        let mut next_lstm = Vec::with_capacity(LSTM_BLOCKS);
        let bottleneck = self.memory(g, p, 0, x, state, &mut next_lstm)?;
        x = bottleneck;
        for level in (0..depth).rev() {
            let w = p.get(&format!("dec{level}.up.weight"))?;
            let b = p.get(&format!("dec{level}.up.bias"))?;
            let up = g.deconv2d(x, w, b, 2)?;
            let up = g.relu(up);
            let merged = g.concat(&[up, skips[level]])?;
            x = self.conv(g, p, &format!("dec{level}.fuse"), merged, 1, true)?;
            if level == depth - 1 {
                x = self.memory(g, p, 1, x, state, &mut next_lstm)?;
            } else if level == depth - 2 {
                x = self.memory(g, p, 2, x, state, &mut next_lstm)?;
            }
        }

        let logit = self.conv(g, p, "disp", x, 1, false)?;
        let unit = g.sigmoid(logit);
        let disparity = g.affine(
            unit,
            T::lit(cfg.disp_max - cfg.disp_min),
            T::lit(cfg.disp_min),
        );

        let pooled = g.global_avg_pool(bottleneck)?;
        let hidden = g.linear(pooled, p.get("pose.fc1.weight")?, p.get("pose.fc1.bias")?)?;
        let hidden = g.relu(hidden);
        let raw = g.linear(hidden, p.get("pose.fc2.weight")?, p.get("pose.fc2.bias")?)?;
        let rot = g.narrow(raw, 0, 3)?;
        let rot = g.scale(rot, T::lit(ROTATION_OUTPUT_SCALE));
        let trans = g.narrow(raw, 3, 3)?;
        let pose = g.concat(&[rot, trans])?;

        Ok(StepVars {
            disparity,
            pose,
            state: GraphState {
                lstm: next_lstm,
                history,
            },
        })
    }

    /// Reads a step's outputs off the graph, rejecting non-finite values.
    pub fn read_output(&self, g: &Graph<T>, step: &StepVars) -> Result<FrameOutput<T>> {
        let disp = g.value(step.disparity);
        if disp.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite disparity output".into()));
        }
        let pose = g.value(step.pose);
        if pose.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite pose output".into()));
        }
        let mut p = [0.0; 6];
        for (d, s) in p.iter_mut().zip(pose) {
            *d = s.to_f64_lossy();
        }
        Ok(FrameOutput {
            disparity: DisparityMap::new(self.config.height, self.config.width, disp.to_vec())?,
            pose: PoseVector::from_array(p),
        })
    }

    fn read_state(&self, g: &Graph<T>, state: &GraphState) -> RecurrentState<T> {
        RecurrentState {
            lstm: state.lstm.iter().map(|&(h, c)| (g.tensor(h), g.tensor(c))).collect(),
            history: state.history.iter().map(|&f| g.tensor(f)).collect(),
        }
    }

    /// One inference step: full-resolution disparity, 6-DoF pose, next state.
    pub fn forward_step(&self, frame: &Tensor<T>, state: &RecurrentState<T>) -> Result<(FrameOutput<T>, RecurrentState<T>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let s = self.bind_state(&mut g, state)?;
        let f = g.constant(frame);
        let step = self.step_graph(&mut g, &p, f, &s)?;
        let out = self.read_output(&g, &step)?;
        Ok((out, self.read_state(&g, &step.state)))
    }

    /// Folds [`Self::forward_step`] over `frames` starting from the zero state.
    pub fn forward_sequence(&self, frames: &[Tensor<T>]) -> Result<Vec<FrameOutput<T>>> {
        if frames.is_empty() {
            return Err(Error::Contract("forward_sequence needs at least one frame".into()));
        }
        let mut state = self.zero_state();
        let mut outputs = Vec::with_capacity(frames.len());
        for frame in frames {
            let (out, next) = self.forward_step(frame, &state)?;
            outputs.push(out);
            state = next;
        }
        Ok(outputs)
    }
}

pub fn forward_step<T: Real>(model: &Model<T>, frame: &Tensor<T>, state: &RecurrentState<T>) -> Result<(FrameOutput<T>, RecurrentState<T>)> {
    model.forward_step(frame, state)
}

pub fn forward_sequence<T: Real>(model: &Model<T>, frames: &[Tensor<T>]) -> Result<Vec<FrameOutput<T>>> {
    model.forward_sequence(frames)
}
