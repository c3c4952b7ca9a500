use serde::{Deserialize, Serialize};

use super::{InputMode, Model};
use crate::data::ImagePromptPair;
use crate::error::{Error, Result};
use crate::losses_metrics::{MetricSet, ScorePairSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head: String,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

/// Per-head correlations on one test set. Undefined metrics are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heads: Vec<HeadMetrics>,
    pub n_samples: usize,
    pub repeat: Option<usize>,
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn head(&self, name: &str) -> Option<&MetricSet> {
        self.heads.iter().find(|h| h.head == name).map(|h| &h.metrics)
    }
}

fn head_names(n_out: usize) -> Vec<String> {
    match n_out {
        1 => vec!["mos".into()],
        _ => ["quality", "alignment"]
            .iter()
            .take(n_out)
            .map(|s| s.to_string())
            .collect(),
    }
}

/// Correlations between given predictions and the pairs' targets.
pub fn evaluate_predictions(predictions: &[Vec<f64>], data: &[ImagePromptPair]) -> Result<EvalReport> {
    if predictions.len() != data.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} pairs",
            predictions.len(),
            data.len()
        )));
    }
    if data.len() < 2 {
        return Err(Error::Data("evaluation needs at least two pairs".into()));
    }
    let n_out = data[0].targets().len();
    let mut heads = Vec::with_capacity(n_out);
    for (h, name) in head_names(n_out).into_iter().enumerate() {
        let mut pred = Vec::with_capacity(data.len());
        let mut truth = Vec::with_capacity(data.len());
        for (p, pair) in predictions.iter().zip(data) {
            let t = pair.targets();
            if p.len() != n_out || t.len() != n_out {
                return Err(Error::Data(format!("pair `{}` does not have {n_out} score(s)", pair.id)));
            }
            pred.push(p[h]);
            truth.push(t[h]);
        }
        let series = ScorePairSeries::new(pred, truth)?;
        heads.push(HeadMetrics {
            head: name,
            metrics: MetricSet::compute(&series),
        });
    }
    Ok(EvalReport {
        heads,
        n_samples: data.len(),
        repeat: None,
        seed: None,
    })
}

pub fn evaluate(model: &Model, mode: InputMode, data: &[ImagePromptPair]) -> Result<EvalReport> {
    let preds = model.predict(data, mode)?;
    evaluate_predictions(&preds, data)
}

/// Arithmetic mean of every metric across reports. A metric undefined in
/// any report stays undefined in the mean.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Data("no reports to average".into()))?;
    let mut heads = Vec::with_capacity(first.heads.len());
    for (h, head) in first.heads.iter().enumerate() {
        let column: Vec<&MetricSet> = reports
            .iter()
            .map(|r| {
                r.heads
                    .get(h)
                    .filter(|x| x.head == head.head)
                    .map(|x| &x.metrics)
                    .ok_or_else(|| Error::Data(format!("report lacks head `{}`", head.head)))
            })
            .collect::<Result<_>>()?;
        let mean = |f: fn(&MetricSet) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = column.iter().map(|m| f(m)).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        heads.push(HeadMetrics {
            head: head.head.clone(),
            metrics: MetricSet {
                srcc: mean(|m| m.srcc),
                plcc: mean(|m| m.plcc),
                krcc: mean(|m| m.krcc),
            },
        });
    }
    Ok(EvalReport {
        heads,
        n_samples: reports.iter().map(|r| r.n_samples).sum::<usize>() / reports.len(),
        repeat: None,
        seed: None,
    })
}
