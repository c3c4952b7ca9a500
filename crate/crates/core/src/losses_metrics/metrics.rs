use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired predictions and ground-truth scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePairSeries {
    predictions: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl ScorePairSeries {
    pub fn new(predictions: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self> {
        if predictions.len() != ground_truth.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} ground-truth scores",
                predictions.len(),
                ground_truth.len()
            )));
        }
        if predictions.len() < 2 {
            return Err(Error::UndefinedMetric("fewer than two score pairs".into()));
        }
        if predictions.iter().chain(&ground_truth).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite score".into()));
        }
        Ok(Self {
            predictions,
            ground_truth,
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// SRCC/PLCC/KRCC for one output head. `None` marks an undefined metric
/// (e.g. constant predictions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub krcc: Option<f64>,
}

impl MetricSet {
    pub fn compute(s: &ScorePairSeries) -> Self {
        Self {
            srcc: srcc(s).ok(),
            plcc: plcc(s).ok(),
            krcc: krcc(s).ok(),
        }
    }
}

fn pearson(x: &[f64], y: &[f64], what: &str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(format!("{what}: zero variance")));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn plcc(s: &ScorePairSeries) -> Result<f64> {
    pearson(&s.predictions, &s.ground_truth, "PLCC")
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(s: &ScorePairSeries) -> Result<f64> {
    pearson(
        &average_ranks(&s.predictions),
        &average_ranks(&s.ground_truth),
        "SRCC",
    )
}

/// Kendall tau-b: `(C - D) / sqrt((n0 - tx)(n0 - ty))`.
pub fn krcc(s: &ScorePairSeries) -> Result<f64> {
    let (x, y) = (&s.predictions, &s.ground_truth);
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            let prod = dx * dy;
            if prod > 0.0 {
                concordant += 1;
            } else if prod < 0.0 {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tied_x) as f64) * ((n0 - tied_y) as f64);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("KRCC: all pairs tied".into()));
    }
    Ok(((concordant - discordant) as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}
