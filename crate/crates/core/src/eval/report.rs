//! The similarity table.

use serde::{Deserialize, Serialize};

use super::sets::{EvalConfig, EvalSets};
use super::similarity::{corresponding, natural_consistency, pairwise_across, pairwise_within, stability, PairCap, Similarity};
use crate::error::{Error, Result};
use crate::store::EmbeddingDataset;

/// Row names in table order, with the comparison each one makes.
pub const REPORT_ROWS: [(&str, &str); 8] = [
    ("original_diversity", "Pairwise(S_syn, S_syn)"),
    ("generated_diversity", "Pairwise(G_syn, G_syn)"),
    ("original_coverage", "Pairwise(G_syn, S_syn)"),
    ("distribution_fidelity", "Pairwise(S_syn, GT)"),
    ("speaker_fidelity_syn", "Corresponding(S_syn, GT)"),
    ("speaker_fidelity_recon", "Corresponding(S_recon, GT)"),
    ("stability", "Stability(G_syn)"),
    ("natural_consistency", "NaturalConsistency(data)"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub pair_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedRow {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rows: Vec<ReportRow>,
    pub omitted: Vec<OmittedRow>,
}

impl SimilarityReport {
    pub fn get(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Column-aligned plain-text rendering.
    pub fn render_table(&self) -> String {
        let label = |name: &str| {
            let what = REPORT_ROWS.iter().find(|r| r.0 == name).map_or("", |r| r.1);
            format!("{what}, {name}")
        };
        let labels: Vec<String> = self.rows.iter().map(|r| label(&r.name)).collect();
        let omitted: Vec<String> = self.omitted.iter().map(|o| label(&o.name)).collect();
        let w = labels.iter().chain(&omitted).map(String::len).chain(["metric".len()]).max().unwrap_or(0);
        let mut out = format!("{:<w$}  {:>15}  {:>10}\n", "metric", "mean±std", "pairs");
        out.push_str(&format!("{}\n", "-".repeat(w + 29)));
        for (r, l) in self.rows.iter().zip(&labels) {
            let ms = format!("{:.2}±{:.2}", r.mean, r.std);
            out.push_str(&format!("{l:<w$}  {ms:>15}  {:>10}\n", r.pair_count));
        }
        for l in &omitted {
            out.push_str(&format!("{l:<w$}  {:>15}  {:>10}\n", "omitted", "-"));
        }
        out
    }
}

fn missing(set: &str) -> Error {
    Error::validation(format!("{set} set not available"))
}

/// Compute every row whose inputs are present; the rest are listed as omitted.
pub fn assemble_report(sets: &EvalSets, data: Option<&EmbeddingDataset>, config: &EvalConfig) -> Result<SimilarityReport> {
    config.validate()?;
    let cap = PairCap {
        max_pairs: config.pairwise_sample_cap,
        seed: config.seed,
    };
    let s_syn = || sets.s_syn.as_ref().ok_or_else(|| missing("s_syn"));
    let g_syn = || sets.g_syn.as_ref().ok_or_else(|| missing("g_syn"));
    let s_recon = || sets.s_recon.as_ref().ok_or_else(|| missing("s_recon"));
    let compute = |name: &str| -> Result<Similarity> {
        match name {
            "original_diversity" => pairwise_within(s_syn()?, cap),
            "generated_diversity" => pairwise_within(g_syn()?, cap),
            "original_coverage" => pairwise_across(g_syn()?, s_syn()?, true, cap),
            "distribution_fidelity" => pairwise_across(s_syn()?, &sets.gt, true, cap),
            "speaker_fidelity_syn" => corresponding(s_syn()?, &sets.gt),
            "speaker_fidelity_recon" => corresponding(s_recon()?, &sets.gt),
            "stability" => {
                let join = sets.g_syn_join.as_ref().ok_or_else(|| missing("g_syn join"))?;
                stability(g_syn()?, join)
            }
            "natural_consistency" => natural_consistency(data.ok_or_else(|| missing("natural"))?, config.m, config.seed),
            _ => unreachable!("unknown row {name}"),
        }
    };
    let mut report = SimilarityReport {
        rows: Vec::new(),
        omitted: Vec::new(),
    };
    for (name, _) in REPORT_ROWS {
        match compute(name) {
            Ok(s) => report.rows.push(ReportRow {
                name: name.into(),
                mean: s.mean,
                std: s.std,
                pair_count: s.pair_count,
            }),
            Err(Error::Validation(reason)) => report.omitted.push(OmittedRow {
                name: name.into(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if report.rows.is_empty() {
        return Err(Error::validation("no report row could be computed"));
    }
    Ok(report)
}
