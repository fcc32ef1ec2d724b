// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ordinal policy timelines (OxCGRT-style) and treatment-event extraction.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::{sniff_delimiter, DateFormat};
use crate::error::{Error, Result};

/// Highest ordinal level of the workplace-closing scale.
pub const MAX_POLICY_CODE: u8 = 3;

/// Daily ordinal policy level for one unit. Dates are contiguous and codes lie in `0..=3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTimeline {
    unit_id: String,
    dates: Vec<NaiveDate>,
    codes: Vec<u8>,
}

impl PolicyTimeline {
    pub fn new(unit_id: impl Into<String>, dates: Vec<NaiveDate>, codes: Vec<u8>) -> Result<Self> {
        let unit_id = unit_id.into();
        if dates.is_empty() {
            return Err(Error::Validation(format!("timeline for {unit_id} is empty")));
        }
        if dates.len() != codes.len() {
            return Err(Error::Validation(format!(
                "timeline for {unit_id}: {} dates but {} codes",
                dates.len(),
                codes.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Validation(format!(
                    "timeline for {unit_id}: dates not strictly increasing at {}",
                    pair[1]
                )));
            }
            if pair[0].succ_opt() != Some(pair[1]) {
                return Err(Error::Validation(format!(
                    "timeline for {unit_id}: calendar gap between {} and {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some((i, c)) = codes.iter().enumerate().find(|(_, &c)| c > MAX_POLICY_CODE) {
            return Err(Error::Validation(format!(
                "timeline for {unit_id}: code {c} on {} outside 0..=3",
                dates[i]
            )));
        }
        Ok(Self { unit_id, dates, codes })
    }

    /// Timeline starting at `start` with one code per consecutive day.
    pub fn from_start(unit_id: impl Into<String>, start: NaiveDate, codes: Vec<u8>) -> Result<Self> {
        let dates = start.iter_days().take(codes.len()).collect();
        Self::new(unit_id, dates, codes)
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn first_date(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last_date(&self) -> NaiveDate {
        self.dates[self.dates.len() - 1]
    }

    pub fn code_on(&self, date: NaiveDate) -> Option<u8> {
        let offset = (date - self.first_date()).num_days();
        usize::try_from(offset).ok().and_then(|i| self.codes.get(i).copied())
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.first_date() && date <= self.last_date()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// First day the policy reaches level 3.
    Activation,
    /// First day after activation the policy is back at level 2.
    Deactivation,
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "activation" => Ok(EventKind::Activation),
            "deactivation" => Ok(EventKind::Deactivation),
            other => Err(Error::Argument(format!("unknown event kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentEvent {
    pub unit_id: String,
    pub kind: EventKind,
    pub date: NaiveDate,
}

/// Activation at the first level-3 day, deactivation at the first later level-2 day.
///
/// Intermediate levels before activation are ignored.
pub fn extract_treatment_events(timeline: &PolicyTimeline) -> Vec<TreatmentEvent> {
    let mut events = Vec::with_capacity(2);
    let Some(start) = timeline.codes.iter().position(|&c| c >= MAX_POLICY_CODE) else {
        return events;
    };
    events.push(TreatmentEvent {
        unit_id: timeline.unit_id.clone(),
        kind: EventKind::Activation,
        date: timeline.dates[start],
    });
    if let Some(end) = timeline.codes[start + 1..].iter().position(|&c| c == 2) {
        events.push(TreatmentEvent {
            unit_id: timeline.unit_id.clone(),
            kind: EventKind::Deactivation,
            date: timeline.dates[start + 1 + end],
        });
    }
    events
}

const COUNTRY_COLUMNS: [&str; 2] = ["CountryName", "country"];
const REGION_COLUMNS: [&str; 2] = ["RegionName", "region"];
const UNIT_COLUMNS: [&str; 2] = ["unit_id", "unit"];
const DATE_COLUMNS: [&str; 2] = ["Date", "date"];

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Exact header match first, then a unique `<indicator>_...` column that is not a flag.
fn find_indicator(headers: &csv::StringRecord, indicator: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h.trim() == indicator) {
        return Ok(i);
    }
    let candidates: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            let h = h.trim();
            h.split('_').next() == Some(indicator) && !h.to_ascii_lowercase().ends_with("flag")
        })
        .map(|(i, _)| i)
        .collect();
    match candidates.as_slice() {
        [i] => Ok(*i),
        [] => Err(Error::Schema(format!(
            "policy header has no column for indicator {indicator:?}"
        ))),
        _ => Err(Error::Schema(format!(
            "indicator {indicator:?} matches several policy columns"
        ))),
    }
}

struct RawRow {
    date: NaiveDate,
    value: Option<f64>,
    line: usize,
}

/// Parses a delimiter-separated policy table into one timeline per unit.
///
/// Units are keyed `CountryName` or `CountryName/RegionName`; a `unit_id` column
/// is accepted instead. Empty indicator cells are forward-filled, leading empties
/// become 0. Output order follows first appearance in the file.
pub fn parse_policy_csv<R: Read>(mut source: R, indicator_column: &str) -> Result<Vec<PolicyTimeline>> {
    const NAME: &str = "policy table";
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::parse(NAME, 0, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(&text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(NAME, 1, e.to_string()))?
        .clone();

    let unit_col = find_column(&headers, &UNIT_COLUMNS);
    let country_col = find_column(&headers, &COUNTRY_COLUMNS);
    let region_col = find_column(&headers, &REGION_COLUMNS);
    if unit_col.is_none() && country_col.is_none() {
        return Err(Error::Schema(
            "policy header needs a CountryName or unit_id column".into(),
        ));
    }
    let date_col =
        find_column(&headers, &DATE_COLUMNS).ok_or_else(|| Error::Schema("policy header has no Date column".into()))?;
    let value_col = find_indicator(&headers, indicator_column)?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RawRow>> = HashMap::new();
    let mut date_format: Option<DateFormat> = None;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(NAME, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");

        let unit = match unit_col {
            Some(c) => field(c).to_string(),
            None => {
                let country = field(country_col.expect("checked above"));
                match region_col.map(field).filter(|r| !r.is_empty()) {
                    Some(region) => format!("{country}/{region}"),
                    None => country.to_string(),
                }
            }
        };
        if unit.is_empty() {
            return Err(Error::parse(NAME, line, "empty unit name"));
        }

        let raw_date = field(date_col);
        let fmt = match date_format {
            Some(f) => f,
            None => {
                let f = DateFormat::detect(raw_date)
                    .ok_or_else(|| Error::parse(NAME, line, format!("malformed date {raw_date:?}")))?;
                date_format = Some(f);
                f
            }
        };
        let date = fmt
            .parse(raw_date)
            .ok_or_else(|| Error::parse(NAME, line, format!("malformed date {raw_date:?}")))?;

        let raw_value = field(value_col);
        let value = if raw_value.is_empty() {
            None
        } else {
            Some(
                raw_value
                    .parse::<f64>()
                    .map_err(|_| Error::parse(NAME, line, format!("non-numeric policy code {raw_value:?}")))?,
            )
        };

        rows.entry(unit.clone())
            .or_insert_with(|| {
                order.push(unit.clone());
                Vec::new()
            })
            .push(RawRow { date, value, line });
    }

    order
        .into_iter()
        .map(|unit| {
            let mut unit_rows = rows.remove(&unit).expect("unit recorded with rows");
            unit_rows.sort_by_key(|r| r.date);
            build_timeline(unit, unit_rows)
        })
        .collect()
}

fn build_timeline(unit: String, rows: Vec<RawRow>) -> Result<PolicyTimeline> {
    let mut dates = Vec::with_capacity(rows.len());
    let mut codes = Vec::with_capacity(rows.len());
    let mut last = 0.0_f64;
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            let prev = rows[i - 1].date;
            if row.date == prev {
                return Err(Error::Validation(format!(
                    "{unit}: duplicate date {} (row {})",
                    row.date, row.line
                )));
            }
            if prev.succ_opt() != Some(row.date) {
                return Err(Error::Validation(format!(
                    "{unit}: calendar gap between {prev} and {} (row {})",
                    row.date, row.line
                )));
            }
        }
        let value = row.value.unwrap_or(last);
        if value.fract() != 0.0 || !(0.0..=f64::from(MAX_POLICY_CODE)).contains(&value) {
            return Err(Error::Validation(format!(
                "{unit}: policy code {value} on {} (row {}) outside 0..=3",
                row.date, row.line
            )));
        }
        last = value;
        dates.push(row.date);
        codes.push(value as u8);
    }
    PolicyTimeline::new(unit, dates, codes)
}

/// Writes timelines in the layout [`parse_policy_csv`] reads back.
pub fn write_policy_csv<W: Write>(timelines: &[PolicyTimeline], indicator_column: &str, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let to_err = |e: csv::Error| Error::Validation(format!("writing policy table: {e}"));
    writer
        .write_record(["CountryName", "RegionName", "Date", indicator_column])
        .map_err(to_err)?;
    for t in timelines {
        let (country, region) = t.unit_id.split_once('/').unwrap_or((&t.unit_id, ""));
        for (date, code) in t.dates.iter().zip(&t.codes) {
            writer
                .write_record([country, region, &DateFormat::Compact.format(*date), &code.to_string()])
                .map_err(to_err)?;
        }
    }
    writer
        .flush()
        .map_err(|e| Error::Validation(format!("writing policy table: {e}")))?;
    Ok(())
}
