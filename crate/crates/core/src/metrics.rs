//! Depth-map error metrics.
//!
//! Arguments follow the convention `(z, z_gt, mask)`: `z` is the prediction
//! and `z_gt` the ground truth. Logarithms are base 10; many other codebases
//! use the natural log, so their sc-inv and RMSE-log values differ by a
//! factor of ln 10.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Pixel indices selected by `mask`, after validating positivity and matching lengths.
fn selected(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<Vec<usize>> {
    if z.len() != z_gt.len() || mask.is_some_and(|m| m.len() != z.len()) {
        return Err(Error::Dimension(format!(
            "metric inputs of lengths {}, {} and mask {:?}",
            z.len(),
            z_gt.len(),
            mask.map(<[bool]>::len)
        )));
    }
    let idx: Vec<usize> = (0..z.len()).filter(|&i| mask.is_none_or(|m| m[i])).collect();
    if idx.is_empty() {
        return Err(Error::Contract("metric evaluated over an empty mask".into()));
    }
    for &i in &idx {
        if !(z[i] > 0.0 && z_gt[i] > 0.0 && z[i].is_finite() && z_gt[i].is_finite()) {
            return Err(Error::Domain(format!(
                "pixel {i}: depths {} and {} must be positive and finite",
                z[i], z_gt[i]
            )));
        }
    }
    Ok(idx)
}

fn log_residuals(z: &[f64], z_gt: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| z[i].log10() - z_gt[i].log10()).collect()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Scale-invariant error: the standard deviation of the log10 residuals.
pub fn sc_inv(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let idx = selected(z, z_gt, mask)?;
    let d = log_residuals(z, z_gt, &idx);
    // Two-pass variance: equal to mean(d²) − mean(d)² without the cancellation.
    let m = mean(d.iter().copied());
    Ok(mean(d.iter().map(|v| (v - m) * (v - m))).sqrt())
}

/// Mean of `|z − z_gt| / z_gt`.
pub fn abs_rel(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let idx = selected(z, z_gt, mask)?;
    Ok(mean(idx.iter().map(|&i| (z[i] - z_gt[i]).abs() / z_gt[i])))
}

/// Mean of `|1/z − 1/z_gt|`.
pub fn abs_inv(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let idx = selected(z, z_gt, mask)?;
    Ok(mean(idx.iter().map(|&i| (1.0 / z[i] - 1.0 / z_gt[i]).abs())))
}

pub fn rmse(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let idx = selected(z, z_gt, mask)?;
    Ok(mean(idx.iter().map(|&i| (z[i] - z_gt[i]).powi(2))).sqrt())
}

pub fn rmse_log(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let idx = selected(z, z_gt, mask)?;
    let d = log_residuals(z, z_gt, &idx);
    Ok(mean(d.iter().map(|v| v * v)).sqrt())
}

/// Mean sc-inv of the pixels whose ground-truth depth falls in one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeRow {
    pub lower: f64,
    pub upper: f64,
    pub sc_inv: f64,
    pub n_pixels: usize,
}

/// sc-inv per ground-truth depth bucket `[edges[k], edges[k+1])`. Empty buckets are omitted.
pub fn range_bucketed_sc_inv(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>, edges: &[f64]) -> Result<Vec<RangeRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!("bucket edges {edges:?} must be strictly increasing")));
    }
    let base = selected(z, z_gt, mask)?;
    let mut rows = Vec::new();
    for w in edges.windows(2) {
        let mut bucket = vec![false; z.len()];
        let mut count = 0;
        for &i in &base {
            if z_gt[i] >= w[0] && z_gt[i] < w[1] {
                bucket[i] = true;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        rows.push(RangeRow {
            lower: w[0],
            upper: w[1],
            sc_inv: sc_inv(z, z_gt, Some(&bucket))?,
            n_pixels: count,
        });
    }
    Ok(rows)
}

/// Drops pixels whose ground truth lies beyond `cap` and clamps the rest to `cap`.
pub fn evaluate_depth_cap(z: &[f64], z_gt: &[f64], cap: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mask: Vec<bool> = z_gt.iter().map(|&g| g <= cap).collect();
    let clamp = |v: &[f64]| v.iter().map(|x| x.min(cap)).collect::<Vec<f64>>();
    (clamp(z), clamp(z_gt), mask)
}

/// The five depth metrics of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sc_inv: f64,
    pub abs_rel: f64,
    pub abs_inv: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub n_pixels: usize,
    pub ranges: Option<Vec<RangeRow>>,
}

impl MetricReport {
    /// All five metrics over the masked pixels of a single map.
    pub fn compute(z: &[f64], z_gt: &[f64], mask: Option<&[bool]>) -> Result<Self> {
        let n_pixels = selected(z, z_gt, mask)?.len();
        Ok(Self {
            sc_inv: sc_inv(z, z_gt, mask)?,
            abs_rel: abs_rel(z, z_gt, mask)?,
            abs_inv: abs_inv(z, z_gt, mask)?,
            rmse: rmse(z, z_gt, mask)?,
            rmse_log: rmse_log(z, z_gt, mask)?,
            n_pixels,
            ranges: None,
        })
    }

    /// Frame-averaged metrics: each metric is computed per frame and the
    /// results are averaged; `n_pixels` is the total count.
    pub fn average(frames: &[MetricReport]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Contract("no frames to average".into()));
        }
        let n = frames.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| frames.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            sc_inv: avg(|r| r.sc_inv),
            abs_rel: avg(|r| r.abs_rel),
            abs_inv: avg(|r| r.abs_inv),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            n_pixels: frames.iter().map(|r| r.n_pixels).sum(),
            ranges: None,
        })
    }

    pub fn is_valid(&self) -> bool {
        [self.sc_inv, self.abs_rel, self.abs_inv, self.rmse, self.rmse_log]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.n_pixels > 0
    }
}

/// One-line `key=value` record.
impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sc_inv={} abs_rel={} abs_inv={} rmse={} rmse_log={} n_pixels={}",
            self.sc_inv, self.abs_rel, self.abs_inv, self.rmse, self.rmse_log, self.n_pixels
        )
    }
}

impl FromStr for MetricReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut values = [None::<f64>; 5];
        let mut n_pixels = None;
        const KEYS: [&str; 5] = ["sc_inv", "abs_rel", "abs_inv", "rmse", "rmse_log"];
        let mut offset = 0;
        for token in s.split_whitespace() {
            let at = s[offset..].find(token).map_or(offset, |p| p + offset);
            offset = at + token.len();
            let bad = |m: String| Error::parse("<metric record>", at, m);
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {token:?}")))?;
            if key == "n_pixels" {
                n_pixels = Some(value.parse().map_err(|_| bad(format!("bad count {value:?}")))?);
            } else if let Some(k) = KEYS.iter().position(|&k| k == key) {
                values[k] = Some(value.parse().map_err(|_| bad(format!("bad number {value:?}")))?);
            } else {
                return Err(bad(format!("unknown key {key:?}")));
            }
        }
        let missing = |k: &str| Error::parse("<metric record>", s.len(), format!("missing key {k}"));
        let get = |k: usize| values[k].ok_or_else(|| missing(KEYS[k]));
        Ok(Self {
            sc_inv: get(0)?,
            abs_rel: get(1)?,
            abs_inv: get(2)?,
            rmse: get(3)?,
            rmse_log: get(4)?,
            n_pixels: n_pixels.ok_or_else(|| missing("n_pixels"))?,
            ranges: None,
        })
    }
}
