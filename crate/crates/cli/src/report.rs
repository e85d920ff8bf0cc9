//! Error statistics over a set of registration results.

use serde::Serialize;

/// Percentiles for the bestN% means.
pub const BEST_PERCENTS: [f64; 4] = [25.0, 50.0, 75.0, 95.0];
/// Pixel thresholds for the fraction-below table.
pub const THRESHOLDS: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// `(Q1 + 2·Q2 + Q3) / 4`.
    pub trimean: f64,
    /// Mean of the errors at or below each of [`BEST_PERCENTS`].
    pub best: [f64; 4],
    /// Share of errors strictly below each of [`THRESHOLDS`].
    pub below: [f64; 3],
}

/// Linearly interpolated quantile of ascending `sorted`, `p` in `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `None` for an empty set; non-finite errors are rejected by the caller.
pub fn summarize(errors: &[f64]) -> Option<Summary> {
    if errors.is_empty() {
        return None;
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q2, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let best = BEST_PERCENTS.map(|pct| {
        let cut = quantile(&s, pct / 100.0);
        let kept: Vec<f64> = s.iter().copied().take_while(|&e| e <= cut).collect();
        mean(&kept)
    });
    let n = s.len() as f64;
    let below = THRESHOLDS.map(|t| s.iter().filter(|&&e| e < t).count() as f64 / n);
    Some(Summary {
        count: s.len(),
        mean: mean(&s),
        median: q2,
        trimean: (q1 + 2.0 * q2 + q3) / 4.0,
        best,
        below,
    })
}

impl Summary {
    /// `(name, value)` rows in report order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("mean".to_string(), self.mean),
            ("median".to_string(), self.median),
            ("trimean".to_string(), self.trimean),
        ];
        for (p, v) in BEST_PERCENTS.iter().zip(self.best) {
            rows.push((format!("best{p}"), v));
        }
        for (t, v) in THRESHOLDS.iter().zip(self.below) {
            rows.push((format!("below_{t}px"), v));
        }
        rows
    }
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
