use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, SCHEMA_VERSION};
use crate::error::{ensure, Result};
use crate::tokens::{Condition, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub condition: String,
    pub seed: u64,
    pub steps: Option<usize>,
    pub fad_i: f64,
    pub fad_s: f64,
    /// `fad_i - fad_s`.
    pub gap: f64,
    pub nll_i: f64,
    pub nll_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub rows: Vec<ComparisonRow>,
}

fn order(condition: &str) -> (u8, usize) {
    match condition.parse::<Condition>() {
        Ok(c) => (
            c.noisy as u8,
            Variant::ALL.iter().position(|v| *v == c.variant).unwrap_or(usize::MAX),
        ),
        Err(_) => (u8::MAX, usize::MAX),
    }
}

/// One row per report: clean conditions before noisy ones, then by
/// featurization, seed and name.
pub fn compare_conditions(reports: &[ExperimentReport]) -> Result<Comparison> {
    ensure!(reports.len() >= 2, Precondition, "comparison needs at least 2 reports, got {}", reports.len());
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            condition: r.condition.clone(),
            seed: r.seed,
            steps: r.best_step,
            fad_i: r.fad_i,
            fad_s: r.fad_s,
            gap: r.fad_i - r.fad_s,
            nll_i: r.nll_i,
            nll_s: r.nll_s,
        })
        .collect();
    rows.sort_by(|a, b| {
        order(&a.condition)
            .cmp(&order(&b.condition))
            .then(a.seed.cmp(&b.seed))
            .then(a.name.cmp(&b.name))
    });
    Ok(Comparison {
        schema_version: SCHEMA_VERSION,
        rows,
    })
}

impl Comparison {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>6} {:>9} {:>9} {:>9} {:>8} {:>8}  name",
            "condition", "seed", "steps", "FAD_i", "FAD_s", "gap", "NLL_i", "NLL_s"
        );
        for r in &self.rows {
            let steps = r.steps.map_or("-".to_string(), |s| s.to_string());
            let _ = writeln!(
                s,
                "{:<14} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>8.4} {:>8.4}  {}",
                r.condition, r.seed, steps, r.fad_i, r.fad_s, r.gap, r.nll_i, r.nll_s, r.name
            );
        }
        s
    }
}
