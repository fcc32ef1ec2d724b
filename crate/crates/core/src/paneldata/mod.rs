// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ingestion, aggregation and alignment of policy timelines and device telemetry.

mod aggregate;
pub mod calendar;
mod panel;
mod policy;
mod telemetry;

use std::collections::BTreeMap;
use std::io::Read;

pub use aggregate::{
    aggregate_telemetry, base_unit, merge_panels, GroupField, Outcome, Statistic, TelemetryFilter, GROUP_SEPARATOR,
    SYSTEM_COUNT, VPRO_PERCENTAGE,
};
pub use panel::PanelDataset;
pub use policy::{
    extract_treatment_events, parse_policy_csv, write_policy_csv, EventKind, PolicyTimeline, TreatmentEvent,
    MAX_POLICY_CODE,
};
pub use telemetry::{parse_telemetry_csv, write_telemetry_csv, Chassis, CpuFamily, TelemetryRecord, TELEMETRY_COLUMNS};

use crate::error::{Error, Result};

/// Categorical unit attributes (continent and the like): unit id → column → level.
pub type UnitLabels = BTreeMap<String, BTreeMap<String, String>>;

/// Reads a unit attribute table keyed by a `unit_id` column.
pub fn parse_unit_labels<R: Read>(mut source: R) -> Result<UnitLabels> {
    const NAME: &str = "unit label table";
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::parse(NAME, 0, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(calendar::sniff_delimiter(&text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(NAME, 1, e.to_string()))?
        .clone();
    let key = headers
        .iter()
        .position(|h| h == "unit_id")
        .ok_or_else(|| Error::Schema("unit label table needs a unit_id column".into()))?;
    let mut out = UnitLabels::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::parse(NAME, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let attrs = headers
            .iter()
            .zip(record.iter())
            .enumerate()
            .filter(|(i, _)| *i != key)
            .map(|(_, (h, v))| (h.to_string(), v.to_string()))
            .collect();
        out.insert(record.get(key).unwrap_or("").to_string(), attrs);
    }
    Ok(out)
}
