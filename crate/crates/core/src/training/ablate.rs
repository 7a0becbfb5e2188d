use std::fmt::Write as _;
use std::path::Path;

use super::{evaluate, load_checkpoint, resume, train, EvalMode, EvalOptions, EvalReport, ModelPredictor, TrainConfig, FINAL_CHECKPOINT, LATEST_CHECKPOINT};
use crate::error::Result;
use crate::network::Variant;
use crate::synthdata::SequenceSample;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub sc_inv: f64,
    pub abs_inv: f64,
    pub abs_rel: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,sc_inv,abs_inv,abs_rel\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.variant.label(), r.sc_inv, r.abs_inv, r.abs_rel);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14}{:>10}{:>10}{:>10}\n", "Method", "sc-inv", "abs-inv", "abs-rel");
        for r in &self.rows {
            let _ = writeln!(s, "{:<14}{:>10.4}{:>10.4}{:>10.4}", r.variant.label(), r.sc_inv, r.abs_inv, r.abs_rel);
        }
        s
    }
}

/// Train one variant, picking up an interrupted run from its directory.
fn run_variant(config: &TrainConfig, sequences: &[SequenceSample], dir: Option<&Path>) -> Result<crate::training::Checkpoint> {
    if let Some(dir) = dir {
        let fin = dir.join(FINAL_CHECKPOINT);
        if fin.exists() {
            let ck = load_checkpoint(&fin)?;
            if ck.step() >= config.max_steps {
                return Ok(ck);
            }
        }
        let latest = dir.join(LATEST_CHECKPOINT);
        if latest.exists() {
            let ck = load_checkpoint(&latest)?;
            log::info!("{}: resuming from step {}", config.variant, ck.step());
            return Ok(resume(config, sequences, ck, Some(dir))?.checkpoint);
        }
    }
    Ok(train(config, sequences, dir)?.checkpoint)
}

/// Train CNN-SINGLE, CNN-STACK, and DenseSLAMNet on the same data with the
/// same seed and step budget, then score each on the held-out sequences
/// (odd indices) with last-frame evaluation.
pub fn ablate(config: &TrainConfig, sequences: &[SequenceSample], out_dir: Option<&Path>) -> Result<AblationTable> {
    let held_out: Vec<SequenceSample> = sequences.iter().skip(1).step_by(2).cloned().collect();
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            variant,
            ..config.clone()
        };
        let dir = out_dir.map(|d| d.join(variant.label()));
        log::info!("ablation: training {variant}");
        let ck = run_variant(&cfg, sequences, dir.as_deref())?;
        let predictor = ModelPredictor {
            model: &ck.model,
            carry_state: true,
        };
        let report = evaluate(&predictor, &held_out, &EvalOptions::new(EvalMode::LastFrame, cfg.model.window))?;
        rows.push(AblationRow {
            variant,
            sc_inv: report.metrics.sc_inv,
            abs_inv: report.metrics.abs_inv,
            abs_rel: report.metrics.abs_rel,
            report,
        });
    }
    Ok(AblationTable { rows })
}
