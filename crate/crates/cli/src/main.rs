mod colormap;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rdepth::diagnostics::{gradcheck_suite, DEFAULT_TOLERANCE};
use rdepth::synthdata::{generate_dataset, read_dataset, write_dataset, DatasetSpec, Difficulty, SequenceSample};
use rdepth::training::{
    ablate, evaluate, load_checkpoint, load_sequences, make_windows, resume, train, ConstantPredictor, EvalMode, EvalOptions, GroundTruthPredictor,
    ModelPredictor, Predictor, TrainConfig, LATEST_CHECKPOINT,
};
use rdepth::Error;

#[derive(Parser)]
#[command(name = "rdepth", version, about = "Recurrent depth and ego-motion experiments on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset to disk.
    RenderDataset(RenderArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint (or a stub predictor) on a dataset.
    Eval(EvalArgs),
    /// Train all three variants and compare them.
    Ablate(TrainArgs),
    /// Finite-difference check of every layer and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of scenes; each becomes one sequence.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Frame size as HxW; both extents must be multiples of 16.
    #[arg(long, default_value = "32x48")]
    size: String,
    #[arg(long, default_value = "textured")]
    difficulty: String,
    #[arg(long, default_value_t = 1.0)]
    motion_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value config file (defaults < file < flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory; omitted means render from the data.* settings.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from OUT/latest.ckpt when present.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "stub")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "last_frame")]
    mode: String,
    /// Depth cap applied to both maps before scoring.
    #[arg(long)]
    cap: Option<f64>,
    /// Comma-separated depth-range edges for the per-range table.
    #[arg(long)]
    buckets: Option<String>,
    /// Score with `gt` (ground truth) or `constant:<disparity>` instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    stub: Option<String>,
    /// Window length for stub predictors; checkpoints use their own.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Score only odd-indexed sequences (the training hold-out).
    #[arg(long)]
    held_out: bool,
    /// Dump depth maps for this many sequences.
    #[arg(long, default_value_t = 2)]
    dump: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Corrupt the analytic gradient of the named check.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

enum Failure {
    Lib(Error),
    Gradcheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn threads() -> usize {
    std::env::var("RDEPTH_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("--size {s:?}: expected HxW with both extents multiples of 16"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (h, w): (usize, usize) = (h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?);
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn render_dataset(a: RenderArgs) -> CliResult {
    let (height, width) = parse_size(&a.size)?;
    let difficulty: Difficulty = a.difficulty.parse()?;
    if a.frames == 0 {
        return Err(Error::Config("--frames must be positive".into()).into());
    }
    let spec = DatasetSpec {
        seed: a.seed,
        sequences: a.scenes,
        frames: a.frames,
        height,
        width,
        difficulty,
        motion_scale: a.motion_scale,
    };
    create_dir(&a.out)?;
    let resolved = format!(
        "data.seed={}\ndata.sequences={}\ndata.frames={}\ndata.height={height}\ndata.width={width}\ndata.difficulty={difficulty}\ndata.motion_scale={}\n",
        a.seed, a.scenes, a.frames, a.motion_scale
    );
    write_file(&a.out.join("render.cfg"), &resolved)?;
    let samples = generate_dataset(&spec, threads())?;
    write_dataset(&samples, &a.out)?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let _ = writeln!(manifest, "seq_{i:04} frames={} size={}x{} seed={}", s.len(), s.height(), s.width(), spec.sequence_seed(i));
    }
    write_file(&a.out.join("manifest.txt"), &manifest)?;
    print!("{manifest}");
    println!("{} sequences x {} frames at {height}x{width} ({difficulty}) in {}", samples.len(), a.frames, a.out.display());
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig, Error> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(d) = &a.data {
        cfg.data.root = Some(d.clone());
    }
    if let Some(v) = &a.variant {
        cfg.variant = v.parse()?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(a: &TrainArgs) -> CliResult<(TrainConfig, Vec<SequenceSample>)> {
    let cfg = resolve_config(a)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("resolved.cfg"), &cfg.to_kv())?;
    print!("{}", cfg.to_kv());
    let seqs = load_sequences(&cfg, threads())?;
    Ok((cfg, seqs))
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let (cfg, seqs) = prepare(&a)?;
    let latest = a.out.join(LATEST_CHECKPOINT);
    let outcome = if a.resume && latest.exists() {
        let ck = load_checkpoint(&latest)?;
        info!("resuming from step {}", ck.step());
        resume(&cfg, &seqs, ck, Some(&a.out))?
    } else {
        train(&cfg, &seqs, Some(&a.out))?
    };
    if let Some(last) = outcome.log.records.last() {
        println!("finished step {}: total loss {:.6e}", last.step + 1, last.total);
    } else {
        println!("no training steps run; wrote initialized checkpoint");
    }
    Ok(())
}

fn cmd_ablate(a: TrainArgs) -> CliResult {
    let (cfg, seqs) = prepare(&a)?;
    let table = ablate(&cfg, &seqs, Some(&a.out))?;
    write_file(&a.out.join("ablation.csv"), &table.to_csv())?;
    write_file(&a.out.join("ablation.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let mode: EvalMode = a.mode.parse()?;
    let buckets = match &a.buckets {
        Some(b) => Some(
            b.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad bucket edge {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    if let Some(cap) = a.cap {
        if !(cap > 0.0) {
            return Err(Error::Config("--cap must be positive".into()).into());
        }
    }
    let mut seqs = read_dataset(&a.dataset)?;
    if a.held_out {
        seqs = seqs.into_iter().skip(1).step_by(2).collect();
    }
    let checkpoint = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let (predictor, window): (Box<dyn Predictor + '_>, usize) = match (&checkpoint, a.stub.as_deref()) {
        (Some(ck), _) => {
            let m = ck.model.config();
            if let Some(s) = seqs.iter().find(|s| s.height() != m.height || s.width() != m.width) {
                return Err(Error::Config(format!(
                    "checkpoint expects {}x{} frames, dataset has {}x{}",
                    m.height,
                    m.width,
                    s.height(),
                    s.width()
                ))
                .into());
            }
            (
                Box::new(ModelPredictor {
                    model: &ck.model,
                    carry_state: true,
                }),
                m.window,
            )
        }
        (None, Some("gt")) => (Box::new(GroundTruthPredictor), a.window),
        (None, Some(s)) if s.starts_with("constant:") => {
            let v: f64 = s["constant:".len()..]
                .parse()
                .map_err(|_| Error::Config(format!("bad stub {s:?}")))?;
            if !(v > 0.0) {
                return Err(Error::Config("constant disparity must be positive".into()).into());
            }
            (Box::new(ConstantPredictor(v)), a.window)
        }
        (None, s) => return Err(Error::Config(format!("unknown stub {s:?}; use gt or constant:<disparity>")).into()),
    };
    let opts = EvalOptions {
        mode,
        window,
        cap: a.cap,
        buckets,
    };
    let report = evaluate(predictor.as_ref(), &seqs, &opts)?;
    let record = report.metrics.to_string();
    println!("{record}");
    println!(
        "pose: rot_error={} trans_error={} trans_magnitude={} frames={}",
        report.rot_error, report.trans_error, report.trans_magnitude, report.frames
    );
    let Some(out) = &a.out else {
        return Ok(());
    };
    create_dir(out)?;
    let mut resolved = format!(
        "eval.dataset={}\neval.mode={mode}\neval.window={window}\neval.held_out={}\n",
        a.dataset.display(),
        a.held_out
    );
    let _ = writeln!(resolved, "eval.cap={}", a.cap.map(|c| c.to_string()).unwrap_or_default());
    let _ = writeln!(resolved, "eval.buckets={}", a.buckets.clone().unwrap_or_default());
    match (&a.checkpoint, &a.stub) {
        (Some(p), _) => {
            let _ = writeln!(resolved, "eval.checkpoint={}", p.display());
        }
        (None, Some(s)) => {
            let _ = writeln!(resolved, "eval.stub={s}");
        }
        _ => {}
    }
    write_file(&out.join("eval.cfg"), &resolved)?;
    write_file(&out.join("report.txt"), &format!("{record}\n"))?;
    if let Some(rows) = &report.metrics.ranges {
        let mut csv = String::from("lower,upper,sc_inv,n_pixels\n");
        let mut text = format!("{:>10}{:>10}{:>12}{:>10}\n", "from", "to", "sc-inv", "pixels");
        for r in rows {
            let _ = writeln!(csv, "{},{},{},{}", r.lower, r.upper, r.sc_inv, r.n_pixels);
            let _ = writeln!(text, "{:>10}{:>10}{:>12.5}{:>10}", r.lower, r.upper, r.sc_inv, r.n_pixels);
        }
        write_file(&out.join("ranges.csv"), &csv)?;
        write_file(&out.join("ranges.txt"), &text)?;
        print!("{text}");
    }
    for (i, seq) in seqs.iter().take(a.dump).enumerate() {
        let Some(w) = make_windows(seq, window, window)?.into_iter().next() else {
            continue;
        };
        let preds = predictor.predict(&w)?;
        let t = w.len() - 1;
        let (h, wd) = (w.height(), w.width());
        let gt: Vec<f64> = w.depths[t].data.iter().map(|&v| v as f64).collect();
        let io = |e: std::io::Error| Error::Io {
            path: out.clone(),
            source: e,
        };
        colormap::write_depth_png(out, &format!("seq{i:04}_frame{t:04}_pred"), &preds[t].disparity.to_depth(), h, wd).map_err(io)?;
        colormap::write_depth_png(out, &format!("seq{i:04}_frame{t:04}_gt"), &gt, h, wd).map_err(io)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let results = gradcheck_suite(a.seed, a.tolerance, a.inject_fault.as_deref())?;
    for r in &results {
        println!(
            "{} {:<12} {:<18} max_rel_error={:.3e} tolerance={:.0e} checked={}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.kind.label(),
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked
        );
    }
    let worst = results
        .iter()
        .filter(|r| !r.passed())
        .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)));
    match worst {
        Some(w) => Err(Failure::Gradcheck(format!(
            "gradient check failed; worst offender {} ({}) with max relative error {:.3e}",
            w.name,
            w.kind.label(),
            w.max_rel_error
        ))),
        None => {
            println!("all {} checks passed", results.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::RenderDataset(a) => render_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Gradcheck(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}
