// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::did::{DidFit, TrendDiagnostic};
use crate::error::{Error, Result};
use crate::synth::SynthReport;

/// JSON document written by the `did` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidDocument {
    pub kind: String,
    pub outcome: String,
    pub segment: BTreeMap<String, String>,
    pub treated_units: Vec<String>,
    pub control_units: Vec<String>,
    pub treatment_date: NaiveDate,
    /// Mean daily device count over the treated units.
    pub system_count: Option<f64>,
    #[serde(flatten)]
    pub fit: DidFit,
    pub parallel_trends: Option<TrendDiagnostic>,
}

impl DidDocument {
    pub const KIND: &'static str = "did";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub chassis: String,
    pub cpu_family: String,
    pub units: String,
    pub effect: f64,
    pub p_value: Option<f64>,
    pub system_count: Option<f64>,
    pub source: String,
}

/// Effects laid out by chassis (rows) and CPU family (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub kind: String,
    pub outcome: String,
    pub chassis: Vec<String>,
    pub cpu_families: Vec<String>,
    pub rows: Vec<EffectRow>,
}

impl EffectTable {
    pub fn cell(&self, chassis: &str, cpu_family: &str) -> Option<&EffectRow> {
        self.rows
            .iter()
            .find(|r| r.chassis == chassis && r.cpu_family == cpu_family)
    }

    /// Plain-text grid: one line per chassis, `effect (p)` per CPU family.
    pub fn render(&self) -> String {
        let mut out = format!("{} effect on {}\n", self.kind, self.outcome);
        let _ = write!(out, "{:<12}", "chassis");
        for c in &self.cpu_families {
            let _ = write!(out, " {c:>22}");
        }
        out.push('\n');
        for ch in &self.chassis {
            let _ = write!(out, "{ch:<12}");
            for c in &self.cpu_families {
                let text = match self.cell(ch, c) {
                    Some(r) => match r.p_value {
                        Some(p) => format!("{:.4} (p={p:.3})", r.effect),
                        None => format!("{:.4}", r.effect),
                    },
                    None => "-".to_string(),
                };
                let _ = write!(out, " {text:>22}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::Validation(format!("writing report: {e}"));
        w.write_record([
            "chassis",
            "cpu_family",
            "kind",
            "outcome",
            "units",
            "effect",
            "p_value",
            "system_count",
            "source",
        ])
        .map_err(to_err)?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.chassis.clone(),
                r.cpu_family.clone(),
                self.kind.clone(),
                self.outcome.clone(),
                r.units.clone(),
                r.effect.to_string(),
                opt(r.p_value),
                opt(r.system_count),
                r.source.clone(),
            ])
            .map_err(to_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Validation(format!("writing report: {e}")))
    }
}

const ALL: &str = "all";

/// Merges named result documents of one kind and outcome into one table.
pub fn merge_artifacts(docs: &[(String, serde_json::Value)]) -> Result<EffectTable> {
    if docs.is_empty() {
        return Err(Error::Validation("report needs at least one result document".into()));
    }
    let mut kind: Option<String> = None;
    let mut outcome: Option<String> = None;
    let mut rows: Vec<EffectRow> = Vec::new();
    for (name, value) in docs {
        let this_kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::Validation(format!("{name} is not a did or synth result document")))?
            .to_string();
        let invalid =
            |e: serde_json::Error| Error::Validation(format!("{name} is not a valid {this_kind} document: {e}"));
        let (this_outcome, segment, row) = match this_kind.as_str() {
            DidDocument::KIND => {
                let d: DidDocument = serde_json::from_value(value.clone()).map_err(invalid)?;
                let row = (
                    d.treated_units.join("+"),
                    d.fit.beta0,
                    Some(d.fit.p_value),
                    d.system_count,
                );
                (d.outcome, d.segment, row)
            }
            SynthReport::KIND => {
                let s: SynthReport = serde_json::from_value(value.clone()).map_err(invalid)?;
                let row = (s.treated_unit, s.mean_post_gap, s.p_value, s.system_count);
                (s.outcome, s.segment, row)
            }
            other => {
                return Err(Error::Validation(format!(
                    "{name} has kind {other:?}; only did and synth results can be reported"
                )))
            }
        };
        match &kind {
            Some(k) if *k != this_kind => {
                return Err(Error::Validation(format!(
                    "{name} is a {this_kind} result but earlier documents are {k} results"
                )))
            }
            _ => kind = Some(this_kind.clone()),
        }
        match &outcome {
            Some(o) if *o != this_outcome => {
                return Err(Error::Validation(format!(
                    "{name} measures {this_outcome} but earlier documents measure {o}"
                )))
            }
            _ => outcome = Some(this_outcome),
        }
        let chassis = segment.get("chassis").cloned().unwrap_or_else(|| ALL.to_string());
        let cpu_family = segment.get("cpu_family").cloned().unwrap_or_else(|| ALL.to_string());
        if rows.iter().any(|r| r.chassis == chassis && r.cpu_family == cpu_family) {
            return Err(Error::Validation(format!(
                "{name} repeats the segment chassis={chassis}, cpu_family={cpu_family}"
            )));
        }
        rows.push(EffectRow {
            chassis,
            cpu_family,
            units: row.0,
            effect: row.1,
            p_value: row.2,
            system_count: row.3,
            source: name.clone(),
        });
    }
    rows.sort_by(|a, b| (&a.chassis, &a.cpu_family).cmp(&(&b.chassis, &b.cpu_family)));
    let chassis: BTreeSet<String> = rows.iter().map(|r| r.chassis.clone()).collect();
    let cpus: BTreeSet<String> = rows.iter().map(|r| r.cpu_family.clone()).collect();
    Ok(EffectTable {
        kind: kind.expect("non-empty"),
        outcome: outcome.expect("non-empty"),
        chassis: chassis.into_iter().collect(),
        cpu_families: cpus.into_iter().collect(),
        rows,
    })
}
