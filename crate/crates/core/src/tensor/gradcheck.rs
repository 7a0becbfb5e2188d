use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub checked: usize,
}

/// Central-difference check of `f` at `point`.
///
/// `f` returns the value and its analytic gradient. Only the coordinates in
/// `coords` are perturbed (all of them when `None`).
pub fn finite_diff_check<F>(mut f: F, point: &[f64], h: f64, coords: Option<&[usize]>) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numeric("gradient check: non-finite value at base point".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::Dimension(format!(
            "gradient check: gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };

    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?.0;
        x[i] = orig - h;
        let minus = f(&x)?.0;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "gradient check: non-finite value when perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
