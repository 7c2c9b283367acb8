use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, MetricsReport, TrainConfig};
use crate::data::{FakeType, NewsSample};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Test metrics after the last epoch.
    pub test: MetricsReport,
    pub history: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        let name = v.name();
        self.rows.iter().find(|r| r.variant == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Accuracy, per-class P/R/F1 and per-type accuracy of each variant.
    pub fn to_markdown(&self) -> String {
        let types = FakeType::KNOWN;
        let mut s = String::from("| Variant | Acc. | Fake Pre. | Fake Rec. | Fake F1 | Real Pre. | Real Rec. | Real F1 |");
        for t in types {
            let _ = write!(s, " Acc. {} |", t.name());
        }
        s.push_str("\n|---|---|---|---|---|---|---|---|");
        s.push_str(&"---|".repeat(types.len()));
        s.push('\n');
        for r in &self.rows {
            let m = &r.test;
            let _ = write!(
                s,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.variant,
                m.acc,
                m.fake.pre,
                m.fake.rec,
                m.fake.f1,
                m.real.pre,
                m.real.rec,
                m.real.f1
            );
            for t in types {
                match m.type_accuracy(t) {
                    Some(a) => {
                        let _ = write!(s, " {a:.4} |");
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains the full model and the four single-block ablations from the same
/// initial parameters, split and shuffle seed, and scores each on `test`.
pub fn run_ablation_suite(
    train_set: &[NewsSample],
    test_set: &[NewsSample],
    base: &ModelConfig,
    tc: &TrainConfig,
) -> Result<AblationTable> {
    if test_set.is_empty() {
        return Err(Error::Data(
            "ablation suite needs a non-empty test set".into(),
        ));
    }
    let rows = Variant::ALL
        .iter()
        .map(|&v| ablation_row(train_set, test_set, base, tc, v))
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

/// Trains one variant of `base` from its initial parameters and scores it
/// on `test`.
pub fn ablation_row(
    train_set: &[NewsSample],
    test_set: &[NewsSample],
    base: &ModelConfig,
    tc: &TrainConfig,
    variant: Variant,
) -> Result<AblationRow> {
    let cfg = base.clone().with_ablation(variant.ablation());
    let out = train(&cfg, init_model(&cfg)?, train_set, test_set, tc)?;
    let test = out
        .last_test()
        .cloned()
        .ok_or_else(|| Error::Data("ablation needs at least one epoch and a test set".into()))?;
    Ok(AblationRow {
        variant: variant.name(),
        test,
        history: out.history,
    })
}
