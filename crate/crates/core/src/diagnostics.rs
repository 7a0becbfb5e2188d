//! Finite-difference checks of every differentiable piece, run at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{depth_loss_node, grad_loss_node, pose_loss_nodes, usable_steps, LossWeights};
use crate::network::{Model, ModelConfig, Variant};
use crate::pose::PoseVector;
use crate::synthdata::{render_sequence, Difficulty};
use crate::tensor::{finite_diff_check, GradCheckReport, Graph, Tensor, Var};
use crate::training::{window_loss, TrainWindow};

/// Default bound on the relative error of layer, loss, and network checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Elementwise ops are checked this much more tightly.
pub const ELEMENTWISE_FACTOR: f64 = 1e-2;
const MAX_COORDS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Elementwise,
    Layer,
    Loss,
    Network,
}

impl CheckKind {
    pub fn label(self) -> &'static str {
        match self {
            CheckKind::Elementwise => "elementwise",
            CheckKind::Layer => "layer",
            CheckKind::Loss => "loss",
            CheckKind::Network => "network",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

struct Suite<'a> {
    rng: ChaCha8Rng,
    tolerance: f64,
    fault: Option<&'a str>,
    results: Vec<CheckResult>,
}

/// Values bounded away from zero so kinks (ReLU, |·|) are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

impl Suite<'_> {
    fn coords(&mut self, n: usize) -> Vec<usize> {
        if n <= MAX_COORDS {
            return (0..n).collect();
        }
        let mut c: Vec<usize> = (0..MAX_COORDS).map(|_| self.rng.gen_range(0..n)).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    fn record(&mut self, name: &str, kind: CheckKind, point: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>) -> Result<()> {
        let corrupt = self.fault == Some(name);
        let coords = self.coords(point.len());
        let mut f = |x: &[f64]| {
            let (v, mut g) = f(x)?;
            if corrupt {
                g.iter_mut().for_each(|gi| *gi = *gi * 1.05 + 0.01);
            }
            Ok((v, g))
        };
        let report = if kind == CheckKind::Network {
            // Thousands of ReLU and L1 kinks: a coordinate counts as failed only
            // if it disagrees at two step sizes. A wrong gradient disagrees at
            // both; a step that straddles a kink rarely does so twice.
            let mut report = GradCheckReport {
                max_rel_error: 0.0,
                worst_index: coords[0],
                checked: coords.len(),
            };
            for &c in &coords {
                let a = finite_diff_check(&mut f, point, h, Some(&[c]))?.max_rel_error;
                let b = finite_diff_check(&mut f, point, h / 10.0, Some(&[c]))?.max_rel_error;
                if a.min(b) > report.max_rel_error {
                    report.max_rel_error = a.min(b);
                    report.worst_index = c;
                }
            }
            report
        } else {
            finite_diff_check(f, point, h, Some(&coords))?
        };
        let tolerance = match kind {
            CheckKind::Elementwise => self.tolerance * ELEMENTWISE_FACTOR,
            _ => self.tolerance,
        };
        self.results.push(CheckResult {
            name: name.to_string(),
            kind,
            max_rel_error: report.max_rel_error,
            tolerance,
            checked: report.checked,
        });
        Ok(())
    }

    /// Checks `build` with respect to all of its inputs. The scalar probed is
    /// a fixed random projection of the output.
    fn graph(&mut self, name: &str, kind: CheckKind, shapes: &[&[usize]], point: Vec<f64>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<()> {
        let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), point.len());
        let mut probe: Option<Vec<f64>> = None;
        let mut probe_rng = ChaCha8Rng::seed_from_u64(self.rng.gen());
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut g = Graph::new();
            let mut vars = Vec::new();
            let mut at = 0;
            for (shape, n) in shapes.iter().zip(&sizes) {
                vars.push(g.variable(&Tensor::new(shape, x[at..at + n].to_vec())?));
                at += n;
            }
            let out = build(&mut g, &vars)?;
            let out_shape = g.shape(out).to_vec();
            let w = probe
                .get_or_insert_with(|| (0..g.value(out).len()).map(|_| probe_rng.gen_range(-1.0..1.0)).collect())
                .clone();
            let wv = g.constant(&Tensor::new(&out_shape, w)?);
            let prod = g.mul(out, wv)?;
            let loss = g.sum(prod);
            let value = g.scalar(loss);
            let grads = g.backward(loss)?;
            let mut flat = Vec::with_capacity(x.len());
            for v in &vars {
                flat.extend_from_slice(grads.wrt(*v).ok_or_else(|| Error::Contract("input without gradient".into()))?);
            }
            Ok((value, flat))
        };
        self.record(name, kind, &point, 1e-5, f)
    }
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        encoder_channels: vec![4, 6, 8],
        decoder_channels: vec![3, 4, 6],
        pose_hidden: 6,
        window: 3,
        ..ModelConfig::default()
    }
}

/// Run every check. `fault` names a check whose analytic gradient is
/// deliberately corrupted, to exercise the failure path.
pub fn gradcheck_suite(seed: u64, tolerance: f64, fault: Option<&str>) -> Result<Vec<CheckResult>> {
    if !(tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        tolerance,
        fault,
        results: Vec::new(),
    };
    use CheckKind::*;

    let n = 2 * 4 * 5;
    let p = away_from_zero(&mut s.rng, n);
    s.graph("relu", Elementwise, &[&[2, 4, 5]], p.clone(), |g, v| Ok(g.relu(v[0])))?;
    s.graph("sigmoid", Elementwise, &[&[2, 4, 5]], p.clone(), |g, v| Ok(g.sigmoid(v[0])))?;
    s.graph("tanh", Elementwise, &[&[2, 4, 5]], p.clone(), |g, v| Ok(g.tanh(v[0])))?;
    s.graph("affine", Elementwise, &[&[2, 4, 5]], p.clone(), |g, v| Ok(g.affine(v[0], 1.7, -0.3)))?;
    let p2 = away_from_zero(&mut s.rng, 2 * n);
    s.graph("add", Elementwise, &[&[2, 4, 5], &[2, 4, 5]], p2.clone(), |g, v| g.add(v[0], v[1]))?;
    s.graph("sub", Elementwise, &[&[2, 4, 5], &[2, 4, 5]], p2.clone(), |g, v| g.sub(v[0], v[1]))?;
    s.graph("mul", Elementwise, &[&[2, 4, 5], &[2, 4, 5]], p2.clone(), |g, v| g.mul(v[0], v[1]))?;
    s.graph("concat_narrow", Elementwise, &[&[2, 4, 5], &[2, 4, 5]], p2, |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        g.narrow(c, 1, 2)
    })?;

    let conv_point = |rng: &mut ChaCha8Rng, sizes: &[usize]| -> Vec<f64> { sizes.iter().flat_map(|&n| away_from_zero(rng, n)).collect() };
    let p = conv_point(&mut s.rng, &[3 * 6 * 8, 4 * 3 * 9, 4]);
    s.graph("conv2d_stride1", Layer, &[&[3, 6, 8], &[4, 3, 3, 3], &[4]], p, |g, v| g.conv2d(v[0], v[1], v[2], 1))?;
    let p = conv_point(&mut s.rng, &[3 * 8 * 8, 4 * 3 * 25, 4]);
    s.graph("conv2d_stride2", Layer, &[&[3, 8, 8], &[4, 3, 5, 5], &[4]], p, |g, v| g.conv2d(v[0], v[1], v[2], 2))?;
    let p = conv_point(&mut s.rng, &[3 * 4 * 5, 3 * 2 * 9, 2]);
    s.graph("deconv2d_stride2", Layer, &[&[3, 4, 5], &[3, 2, 3, 3], &[2]], p, |g, v| g.deconv2d(v[0], v[1], v[2], 2))?;
    let (cx, ch) = (2, 3);
    let p = conv_point(&mut s.rng, &[cx * 5 * 6, ch * 5 * 6, ch * 5 * 6, 4 * ch * (cx + ch) * 9, 4 * ch]);
    s.graph(
        "conv_lstm_step",
        Layer,
        &[&[cx, 5, 6], &[ch, 5, 6], &[ch, 5, 6], &[4 * ch, cx + ch, 3, 3], &[4 * ch]],
        p,
        |g, v| {
            let (h, c) = g.conv_lstm_step(v[0], v[1], v[2], v[3], v[4])?;
            g.concat(&[h, c])
        },
    )?;
    let p = away_from_zero(&mut s.rng, 5 * 3 * 4);
    s.graph("global_avg_pool", Layer, &[&[5, 3, 4]], p, |g, v| g.global_avg_pool(v[0]))?;
    let p = conv_point(&mut s.rng, &[6, 4 * 6, 4]);
    s.graph("linear", Layer, &[&[6], &[4, 6], &[4]], p, |g, v| g.linear(v[0], v[1], v[2]))?;

    // Losses, evaluated at disparities away from every kink.
    let (h, w) = (8, 9);
    let gt: Vec<f64> = (0..h * w).map(|_| s.rng.gen_range(0.1..1.0)).collect();
    let pred: Vec<f64> = gt.iter().map(|&v| v * s.rng.gen_range(1.1..1.6)).collect();
    let steps = usable_steps(h, w);
    let scalar_loss = |build: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>, shape: &[usize], x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let v = g.variable(&Tensor::new(shape, x.to_vec())?);
        let l = build(&mut g, v)?;
        let value = g.scalar(l);
        let grads = g.backward(l)?;
        Ok((value, grads.wrt(v).unwrap_or(&[]).to_vec()))
    };
    s.record("loss_depth", Loss, &pred, 1e-5, |x| {
        scalar_loss(&|g, v| depth_loss_node(g, v, &gt, None), &[1, h, w], x)
    })?;
    s.record("loss_grad", Loss, &pred, 1e-5, |x| {
        scalar_loss(&|g, v| grad_loss_node(g, v, &gt, &steps), &[1, h, w], x)
    })?;
    let target = PoseVector::new([0.02, -0.01, 0.03], [0.1, -0.2, 0.3]);
    let pose_point: Vec<f64> = target.as_array().iter().map(|v| v + s.rng.gen_range(-0.2..0.2)).collect();
    s.record("loss_rot", Loss, &pose_point, 1e-5, |x| {
        scalar_loss(&|g, v| Ok(pose_loss_nodes(g, v, &target)?.0), &[6], x)
    })?;
    s.record("loss_trans", Loss, &pose_point, 1e-5, |x| {
        scalar_loss(&|g, v| Ok(pose_loss_nodes(g, v, &target)?.1), &[6], x)
    })?;

    // Whole recurrent network unrolled over a short window, 20 parameters.
    let cfg = tiny_model_config();
    let mut model: Model<f64> = Model::build(Variant::DenseSlamNet, &cfg, seed)?;
    // Zero-initialized biases put units with all-dead inputs exactly on the
    // ReLU kink; nudge them to a generic point.
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v += s.rng.gen_range(0.01..0.05) * if s.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }
    let seq = render_sequence(seed, Difficulty::Textured, cfg.window, cfg.height, cfg.width, 1.0)?;
    let window = TrainWindow::<f64>::from_sample(&seq);
    let names: Vec<(String, usize)> = model.params().iter().map(|(k, t)| (k.clone(), t.numel())).collect();
    // Distinct coordinates: a repeated pick would have its perturbation
    // overwritten by the second copy.
    let mut picks: Vec<(usize, usize)> = Vec::new();
    while picks.len() < 20 {
        let t = s.rng.gen_range(0..names.len());
        let pick = (t, s.rng.gen_range(0..names[t].1));
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }
    let point: Vec<f64> = picks
        .iter()
        .map(|&(t, i)| model.params().get(&names[t].0).unwrap().data()[i])
        .collect();
    // Unit weights keep the total small enough that a short step is not
    // swamped by round-off; a short step rarely straddles a ReLU or L1 kink.
    let weights = LossWeights {
        depth: 1.0,
        grad: 1.0,
        rot: 1.0,
        trans: 1.0,
    };
    s.record("network_bptt", Network, &point, 1e-7, |x| {
        let mut m = model.clone();
        for (&(t, i), &v) in picks.iter().zip(x) {
            m.params_mut().get_mut(&names[t].0).unwrap().data_mut()[i] = v;
        }
        let wl = window_loss(&m, &window, &weights)?;
        let grads = picks.iter().map(|&(t, i)| wl.grads[&names[t].0][i]).collect();
        Ok((wl.total, grads))
    })?;

    if let Some(f) = fault {
        if !s.results.iter().any(|r| r.name == f) {
            return Err(Error::Config(format!("no check named {f:?}")));
        }
    }
    Ok(s.results)
}
