use serde::{Deserialize, Serialize};

use super::report::MetricsReport;
use crate::error::Result;
use crate::fusion::{self, Ablation, FusionConfig, FusionModel, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub recall: f64,
    pub auc: f64,
    pub f1: f64,
    pub epochs: usize,
    /// Error text when the sub-run failed; metrics are then NaN.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("configuration,recall,auc,f1,epochs,status\n");
        for r in &self.rows {
            let status = match &r.failed {
                None => "ok".to_string(),
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant.label(),
                r.recall,
                r.auc,
                r.f1,
                r.epochs,
                status
            ));
        }
        out
    }
}

/// Scores a trained model on the labeled test positions.
pub fn evaluate_model(model: &FusionModel, test: &[Sequence], dataset: &str) -> Result<MetricsReport> {
    let scored = fusion::scored_positions(model, test)?;
    let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.1).collect();
    Ok(MetricsReport::compute(model.ablation.label(), dataset, &scores, &labels)?.0)
}

fn run_one(
    variant: Ablation,
    train: &[Sequence],
    val: &[Sequence],
    test: &[Sequence],
    cfg: FusionConfig,
    seed: u64,
) -> AblationRow {
    let outcome = fusion::train_mptpropnet(train, val, cfg, variant, seed)
        .and_then(|(model, history)| Ok((evaluate_model(&model, test, "test")?, history.len())));
    match outcome {
        Ok((m, epochs)) => AblationRow {
            variant,
            recall: m.recall,
            auc: m.auc,
            f1: m.f1,
            epochs,
            failed: None,
        },
        Err(e) => {
            log::warn!("ablation row {} failed: {e}", variant.label());
            AblationRow {
                variant,
                recall: f64::NAN,
                auc: f64::NAN,
                f1: f64::NAN,
                epochs: 0,
                failed: Some(e.to_string()),
            }
        }
    }
}

/// Trains the full model and the four single-family ablations with the same
/// seed and budget, one thread per row.
pub fn ablate(train: &[Sequence], val: &[Sequence], test: &[Sequence], cfg: FusionConfig, seed: u64) -> AblationReport {
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = Ablation::ALL
            .iter()
            .map(|&v| scope.spawn(move || run_one(v, train, val, test, cfg, seed)))
            .collect();
        handles
            .into_iter()
            .zip(Ablation::ALL)
            .map(|(h, v)| {
                h.join().unwrap_or_else(|_| AblationRow {
                    variant: v,
                    recall: f64::NAN,
                    auc: f64::NAN,
                    f1: f64::NAN,
                    epochs: 0,
                    failed: Some("worker panicked".into()),
                })
            })
            .collect()
    });
    AblationReport { rows }
}
