use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FakeType, NewsSample, LABEL_FAKE, LABEL_REAL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

impl ClassMetrics {
    /// Precision and recall are 0 when their denominator is; F1 is 0 when
    /// `P + R` is.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let pre = ratio(tp, tp + fp);
        let rec = ratio(tp, tp + fn_);
        let f1 = if pre + rec > 0.0 {
            2.0 * pre * rec / (pre + rec)
        } else {
            0.0
        };
        Self { pre, rec, f1 }
    }
}

/// One evaluation of a model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
    pub split: String,
    pub variant: String,
    pub n: usize,
    /// Mean cross-entropy over the split.
    pub loss: f64,
    pub acc: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    /// Accuracy per fake-type code present in the split.
    pub by_type: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// Builds a report from predicted labels aligned with `samples`.
    pub fn from_predictions(
        samples: &[NewsSample],
        predicted: &[u8],
        loss: f64,
        split: &str,
        variant: &str,
        epoch: Option<usize>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot score an empty sample set".into()));
        }
        if samples.len() != predicted.len() {
            return Err(Error::shape(
                "predictions",
                &[samples.len()],
                &[predicted.len()],
            ));
        }
        let mut confusion = [[0usize; 2]; 2];
        let mut per_type: BTreeMap<FakeType, (usize, usize)> = BTreeMap::new();
        for (s, &p) in samples.iter().zip(predicted) {
            confusion[s.label as usize][p as usize] += 1;
            let e = per_type.entry(s.fake_type).or_default();
            e.0 += usize::from(s.label == p);
            e.1 += 1;
        }
        let class = |c: usize| {
            let o = 1 - c;
            ClassMetrics::from_counts(confusion[c][c], confusion[o][c], confusion[c][o])
        };
        let correct = confusion[0][0] + confusion[1][1];
        Ok(Self {
            epoch,
            split: split.into(),
            variant: variant.into(),
            n: samples.len(),
            loss,
            acc: correct as f64 / samples.len() as f64,
            fake: class(LABEL_FAKE as usize),
            real: class(LABEL_REAL as usize),
            by_type: per_type
                .into_iter()
                .map(|(t, (ok, n))| (t.code().to_string(), ok as f64 / n as f64))
                .collect(),
        })
    }

    pub fn type_accuracy(&self, t: FakeType) -> Option<f64> {
        self.by_type.get(&t.code().to_string()).copied()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
