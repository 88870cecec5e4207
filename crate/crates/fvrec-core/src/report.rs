//! Evaluation report: a structured, machine-readable document carrying every
//! metric with its spread, the effective config, and the seed, plus a table
//! renderer aggregating several reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::EvalOutcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    /// Deterministic-mode metrics, then sampled-mode when requested.
    pub outcomes: Vec<EvalOutcome>,
    pub config_echo: String,
}

pub fn render_report(report: &EvaluationReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))
}

pub fn load_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read report {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("cannot parse report {}: {e}", path.display())))
}

fn fmt_metric(value: f64, spread: f64, decimals: usize) -> String {
    format!("{value:.decimals$}±{spread:.decimals$}")
}

/// Renders one table row set per report in the layout of the main result
/// tables: NDCG@k, AUC per attribute, chi-square per attribute, Kendall-Tau
/// per attribute. Sampled-mode outcomes get their own row.
pub fn render_table(reports: &[&EvaluationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>15} {:>15} {:>15} {:>17} {:>17} {:>15} {:>15}",
        "Model", "NDCG@10", "AUC G", "AUC A", "chi2@100 G", "chi2@100 A", "K.T@100 G", "K.T@100 A"
    );
    for report in reports {
        for outcome in &report.outcomes {
            let name = match outcome.mode {
                crate::evalmetrics::ScoreMode::Deterministic => report.model.clone(),
                crate::evalmetrics::ScoreMode::Sampled => format!("{} sampled", report.model),
            };
            let auc = |i: usize| {
                outcome.attrs[i]
                    .auc
                    .map(|m| fmt_metric(m.value, m.spread, 3))
                    .unwrap_or_else(|| "-".to_string())
            };
            let _ = writeln!(
                out,
                "{:<18} {:>15} {:>15} {:>15} {:>17} {:>17} {:>15} {:>15}",
                name,
                fmt_metric(outcome.ndcg.value, outcome.ndcg.spread, 3),
                auc(0),
                auc(1),
                format!(
                    "{} ({})",
                    fmt_metric(outcome.attrs[0].chi2.value, outcome.attrs[0].chi2.spread, 0),
                    outcome.attrs[0].chi2_items_used
                ),
                format!(
                    "{} ({})",
                    fmt_metric(outcome.attrs[1].chi2.value, outcome.attrs[1].chi2.spread, 0),
                    outcome.attrs[1].chi2_items_used
                ),
                fmt_metric(
                    outcome.attrs[0].kendall_tau.value,
                    outcome.attrs[0].kendall_tau.spread,
                    3
                ),
                fmt_metric(
                    outcome.attrs[1].kendall_tau.value,
                    outcome.attrs[1].kendall_tau.spread,
                    3
                ),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalmetrics::{AttrMetrics, MetricWithSpread, ScoreMode};

    fn toy_report() -> EvaluationReport {
        let attr = |name: &str| AttrMetrics {
            attribute: name.to_string(),
            auc: Some(MetricWithSpread {
                value: 0.81,
                spread: 0.02,
            }),
            chi2: MetricWithSpread {
                value: 2990.0,
                spread: 415.9,
            },
            chi2_items_used: 120,
            kendall_tau: MetricWithSpread {
                value: 0.559,
                spread: 0.054,
            },
        };
        EvaluationReport {
            model: "vaerec".into(),
            dataset: "data/synth".into(),
            seed: 42,
            outcomes: vec![EvalOutcome {
                mode: ScoreMode::Deterministic,
                ndcg: MetricWithSpread {
                    value: 0.321,
                    spread: 0.008,
                },
                attrs: vec![attr("gender"), attr("age")],
                users_evaluated: 200,
                users_skipped: 0,
            }],
            config_echo: "seed = 42\n".into(),
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = toy_report();
        let text = render_report(&report).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        std::fs::write(&path, &text).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded.model, report.model);
        assert_eq!(loaded.outcomes.len(), 1);
        assert_eq!(
            loaded.outcomes[0].ndcg.value.to_bits(),
            report.outcomes[0].ndcg.value.to_bits()
        );
        // deterministic rendering
        assert_eq!(text, render_report(&loaded).unwrap());
    }

    #[test]
    fn table_contains_all_seven_metric_columns() {
        let report = toy_report();
        let table = render_table(&[&report]);
        let header = table.lines().next().unwrap();
        for col in ["NDCG@10", "AUC G", "AUC A", "chi2@100 G", "chi2@100 A", "K.T@100 G", "K.T@100 A"] {
            assert!(header.contains(col), "missing column {col}");
        }
        assert!(table.contains("0.321±0.008"));
        assert!(table.contains("(120)"));
    }
}
