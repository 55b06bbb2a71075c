//! Standard depth-accuracy criteria.

use crate::error::{Error, Result};
use crate::field::{BinaryMask, DepthMap};

/// Column order used for CSV output.
pub const METRIC_COLUMNS: [&str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
    }

    pub fn csv_header() -> String {
        METRIC_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
    }
}

/// Evaluation switches; both off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub median_scale: bool,
    /// Ground truth beyond this depth is ignored and predictions are clipped to it.
    pub max_depth: Option<f64>,
}

fn pixels_in_play(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<Vec<usize>> {
    if pred.dims() != gt.dims() || valid.dims() != gt.dims() {
        return Err(Error::invalid("prediction, ground truth and mask dimensions differ"));
    }
    Ok((0..gt.values().len()).filter(|&k| valid.bits()[k] == 1 && pred.validity()[k] && gt.validity()[k]).collect())
}

/// Metrics over pixels valid in the mask and in both maps. `delta_k` counts
/// pixels with `max(p, g) < 1.25^k * min(p, g)`, strictly.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<MetricReport> {
    let idx = pixels_in_play(pred, gt, valid)?;
    if idx.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (p, g) = (pred.values(), gt.values());
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for &k in &idx {
        let (pv, gv) = (p[k], g[k]);
        if !(gv > 0.0) {
            return Err(Error::invalid(format!("non-positive ground truth {gv}")));
        }
        let diff = pv - gv;
        abs_rel += diff.abs() / gv;
        sq_rel += diff * diff / gv;
        sq += diff * diff;
        sq_log += (pv.ln() - gv.ln()).powi(2);
        // Product form: a prediction of exactly `t * gt` sits on the
        // boundary, where the quotient could round below `t`.
        let (hi, lo) = (pv.max(gv), pv.min(gv));
        for (n, hit) in hits.iter_mut().enumerate() {
            if hi < 1.25f64.powi(n as i32 + 1) * lo {
                *hit += 1;
            }
        }
    }
    let n = idx.len() as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
        pixel_count: idx.len(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rescales `pred` so its median over the evaluated pixels matches the
/// ground truth's. Returns the scaled map and the factor.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<(DepthMap, f64)> {
    let idx = pixels_in_play(pred, gt, valid)?;
    if idx.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mp = median(idx.iter().map(|&k| pred.values()[k]).collect());
    let mg = median(idx.iter().map(|&k| gt.values()[k]).collect());
    if mp == 0.0 {
        return Err(Error::invalid("median prediction is zero"));
    }
    let s = mg / mp;
    Ok((pred.scaled(s)?, s))
}

/// [`compute_metrics`] with the optional depth cap and median scaling applied first.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask, opts: &EvalOptions) -> Result<MetricReport> {
    let mut valid = valid.clone();
    let mut pred = pred.clone();
    if let Some(cap) = opts.max_depth {
        let keep = BinaryMask::from_fn(gt.height(), gt.width(), |i, j| gt.get(i, j).is_some_and(|g| g <= cap));
        valid = valid.and(&keep)?;
    }
    if opts.median_scale {
        pred = median_scale(&pred, gt, &valid)?.0;
    }
    if let Some(cap) = opts.max_depth {
        let vals =
            pred.values().iter().zip(pred.validity()).map(|(v, ok)| if *ok { v.min(cap) } else { 0.0 }).collect();
        pred = DepthMap::from_values(pred.height(), pred.width(), vals)?;
    }
    compute_metrics(&pred, gt, &valid)
}
