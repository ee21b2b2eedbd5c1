use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, Metric};
use super::roc::{auc, roc_curve, RocPoint};
use super::spline::{spline_smooth, DEFAULT_SAMPLES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub samples: usize,
    pub recall: f64,
    pub precision: f64,
    pub auc: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    /// Names of metrics that hit a 0/0 and were reported as 0.
    pub degenerate: Vec<String>,
}

impl MetricsReport {
    /// Scores are P(propagated); predictions use `score > 0.5`.
    pub fn compute(model: &str, dataset: &str, scores: &[f64], labels: &[bool]) -> Result<(Self, Vec<RocPoint>)> {
        if scores.is_empty() {
            return Err(Error::Domain("no samples to evaluate".into()));
        }
        let confusion = ConfusionMatrix::from_scores(scores, labels, 0.5)?;
        let curve = roc_curve(scores, labels)?;
        let named: [(&str, Metric); 3] = [
            ("recall", confusion.recall()),
            ("precision", confusion.precision()),
            ("f1", confusion.f1()),
        ];
        let report = Self {
            model: model.to_string(),
            dataset: dataset.to_string(),
            samples: scores.len(),
            recall: named[0].1.value,
            precision: named[1].1.value,
            auc: auc(&curve),
            f1: named[2].1.value,
            confusion,
            degenerate: named
                .iter()
                .filter(|(_, m)| m.degenerate)
                .map(|(n, _)| n.to_string())
                .collect(),
        };
        Ok((report, curve))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub fn roc_csv(curve: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in curve {
        let _ = writeln!(out, "{},{}", p.fpr, p.tpr);
    }
    out
}

fn polyline(points: &[(f64, f64)], size: f64, pad: f64) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", pad + x * size, pad + (1.0 - y) * size))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Line chart of the raw curve and its spline-smoothed rendering.
pub fn roc_svg(curve: &[RocPoint], title: &str, auc_value: f64) -> String {
    let (size, pad) = (400.0, 50.0);
    let raw: Vec<(f64, f64)> = curve.iter().map(|p| (p.fpr, p.tpr)).collect();
    let smooth = spline_smooth(&raw, DEFAULT_SAMPLES);
    let total = size + 2.0 * pad;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{}" x2="{}" y2="{pad}" stroke="#999" stroke-dasharray="4 4"/>"##,
        pad + size,
        pad + size
    );
    let _ = writeln!(
        s,
        r##"<polyline id="raw" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        polyline(&raw, size, pad)
    );
    let _ = writeln!(
        s,
        r##"<polyline id="smoothed" fill="none" stroke="#d62728" stroke-width="1" stroke-dasharray="3 2" points="{}"/>"##,
        polyline(&smooth, size, pad)
    );
    let esc = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(s, r#"<text x="{pad}" y="30" font-size="14">{esc} (AUC = {auc_value:.4})</text>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">false positive rate</text>"#, pad + size / 2.0 - 50.0, total - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})">true positive rate</text>"#,
        pad + size / 2.0 + 50.0,
        pad + size / 2.0 + 50.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" font-size="11" fill="#1f77b4">raw</text>"##,
        pad + size - 150.0,
        pad + size - 30.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" font-size="11" fill="#d62728">spline (presentation only)</text>"##,
        pad + size - 150.0,
        pad + size - 15.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.json`, `roc.csv`, `roc.svg` and `confusion.csv` under `dir`
/// with the given file-name prefix.
pub fn write_evaluation(dir: &Path, prefix: &str, report: &MetricsReport, curve: &[RocPoint]) -> Result<Vec<std::path::PathBuf>> {
    let name = |suffix: &str| {
        if prefix.is_empty() {
            dir.join(suffix)
        } else {
            dir.join(format!("{prefix}_{suffix}"))
        }
    };
    let files = [
        (name("metrics.json"), report.to_json()),
        (name("roc.csv"), roc_csv(curve)),
        (name("roc.svg"), roc_svg(curve, &format!("{} on {}", report.model, report.dataset), report.auc)),
        (name("confusion.csv"), report.confusion.to_csv()),
    ];
    for (p, c) in &files {
        write_file(p, c)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_fields() {
        let (r, curve) = MetricsReport::compute("m", "d", &[0.9, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert_eq!(r.confusion, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!((r.recall, r.precision, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.auc, 0.75);
        assert!(r.degenerate.is_empty());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["model", "dataset", "recall", "auc", "f1"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion"]["fn"], 1);
        assert_eq!(roc_csv(&curve).lines().next(), Some("fpr,tpr"));
        assert_eq!(roc_csv(&curve).lines().count(), curve.len() + 1);
    }

    #[test]
    fn degenerate_names_listed() {
        let (r, _) = MetricsReport::compute("m", "d", &[0.1, 0.2], &[true, false]).unwrap();
        assert_eq!(r.degenerate, vec!["precision".to_string(), "f1".to_string()]);
    }

    #[test]
    fn svg_has_both_series() {
        let curve = roc_curve(&[0.9, 0.7, 0.6, 0.3, 0.2], &[true, true, false, true, false]).unwrap();
        let svg = roc_svg(&curve, "a<b", 0.8);
        assert!(svg.contains(r#"id="raw""#) && svg.contains(r#"id="smoothed""#));
        assert!(svg.contains("presentation only") && svg.contains("a&lt;b"));
    }

    #[test]
    fn writes_four_files() {
        let dir = tempfile::tempdir().unwrap();
        let (r, curve) = MetricsReport::compute("m", "d", &[0.9, 0.1, 0.8], &[true, false, false]).unwrap();
        let files = write_evaluation(dir.path(), "lr", &r, &curve).unwrap();
        assert_eq!(files.len(), 4);
        assert!(dir.path().join("lr_metrics.json").exists());
    }
}
