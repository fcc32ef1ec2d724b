// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-device daily telemetry records.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::{sniff_delimiter, DateFormat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Chassis {
    Notebook,
    Desktop,
    TwoInOne,
    #[serde(rename = "NUC")]
    Nuc,
}

impl Chassis {
    pub const ALL: [Chassis; 4] = [Chassis::Notebook, Chassis::Desktop, Chassis::TwoInOne, Chassis::Nuc];
}

impl fmt::Display for Chassis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chassis::Notebook => "Notebook",
            Chassis::Desktop => "Desktop",
            Chassis::TwoInOne => "TwoInOne",
            Chassis::Nuc => "NUC",
        })
    }
}

impl FromStr for Chassis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "notebook" | "laptop" => Ok(Chassis::Notebook),
            "desktop" => Ok(Chassis::Desktop),
            "twoinone" | "2in1" => Ok(Chassis::TwoInOne),
            "nuc" => Ok(Chassis::Nuc),
            _ => Err(Error::Argument(format!("unknown chassis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CpuFamily {
    #[serde(rename = "i3")]
    I3,
    #[serde(rename = "i5")]
    I5,
    #[serde(rename = "i7")]
    I7,
    #[serde(rename = "i9")]
    I9,
    Other,
}

impl CpuFamily {
    pub const ALL: [CpuFamily; 5] = [
        CpuFamily::I3,
        CpuFamily::I5,
        CpuFamily::I7,
        CpuFamily::I9,
        CpuFamily::Other,
    ];
}

impl fmt::Display for CpuFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CpuFamily::I3 => "i3",
            CpuFamily::I5 => "i5",
            CpuFamily::I7 => "i7",
            CpuFamily::I9 => "i9",
            CpuFamily::Other => "Other",
        })
    }
}

impl FromStr for CpuFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i3" => Ok(CpuFamily::I3),
            "i5" => Ok(CpuFamily::I5),
            "i7" => Ok(CpuFamily::I7),
            "i9" => Ok(CpuFamily::I9),
            "other" => Ok(CpuFamily::Other),
            _ => Err(Error::Argument(format!("unknown cpu family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub date: NaiveDate,
    pub device_id: String,
    pub unit_id: String,
    pub chassis: Chassis,
    pub cpu_family: CpuFamily,
    pub vpro: bool,
    /// Active (C0) hours per day, in `[0, 24]`.
    pub usage_hours: f64,
    pub cpu_watts: f64,
}

impl TelemetryRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.usage_hours.is_finite() && (0.0..=24.0).contains(&self.usage_hours)) {
            return Err(Error::Validation(format!(
                "device {} on {}: usage_hours {} outside [0, 24]",
                self.device_id, self.date, self.usage_hours
            )));
        }
        if !(self.cpu_watts.is_finite() && self.cpu_watts >= 0.0) {
            return Err(Error::Validation(format!(
                "device {} on {}: cpu_watts {} is negative or non-finite",
                self.device_id, self.date, self.cpu_watts
            )));
        }
        Ok(())
    }
}

pub const TELEMETRY_COLUMNS: [&str; 8] = [
    "date",
    "device_id",
    "unit_id",
    "chassis",
    "cpu_family",
    "vpro",
    "usage_hours",
    "cpu_watts",
];

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads telemetry rows; columns are located by header name and extras are ignored.
pub fn parse_telemetry_csv<R: Read>(mut source: R) -> Result<Vec<TelemetryRecord>> {
    const NAME: &str = "telemetry table";
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
    let mut cols = [0usize; 8];
    for (slot, name) in cols.iter_mut().zip(TELEMETRY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("telemetry header lacks column {name:?}")))?;
    }

    let mut date_format = None;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(NAME, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |what: &str, raw: &str| Error::parse(NAME, line, format!("malformed {what} {raw:?}"));

        let fmt = match date_format {
            Some(f) => f,
            None => {
                let f = DateFormat::detect(get(0)).ok_or_else(|| bad("date", get(0)))?;
                date_format = Some(f);
                f
            }
        };
        let rec = TelemetryRecord {
            date: fmt.parse(get(0)).ok_or_else(|| bad("date", get(0)))?,
            device_id: get(1).to_string(),
            unit_id: get(2).to_string(),
            chassis: get(3).parse().map_err(|_| bad("chassis", get(3)))?,
            cpu_family: get(4).parse().map_err(|_| bad("cpu_family", get(4)))?,
            vpro: parse_bool(get(5)).ok_or_else(|| bad("vpro", get(5)))?,
            usage_hours: get(6).parse().map_err(|_| bad("usage_hours", get(6)))?,
            cpu_watts: get(7).parse().map_err(|_| bad("cpu_watts", get(7)))?,
        };
        if rec.unit_id.is_empty() {
            return Err(Error::parse(NAME, line, "empty unit_id"));
        }
        rec.validate()
            .map_err(|e| Error::Validation(format!("row {line}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_telemetry_csv<W: Write>(records: &[TelemetryRecord], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let to_err = |e: csv::Error| Error::Validation(format!("writing telemetry table: {e}"));
    writer.write_record(TELEMETRY_COLUMNS).map_err(to_err)?;
    for r in records {
        writer
            .write_record([
                DateFormat::Iso.format(r.date),
                r.device_id.clone(),
                r.unit_id.clone(),
                r.chassis.to_string(),
                r.cpu_family.to_string(),
                u8::from(r.vpro).to_string(),
                r.usage_hours.to_string(),
                r.cpu_watts.to_string(),
            ])
            .map_err(to_err)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Validation(format!("writing telemetry table: {e}")))?;
    Ok(())
}
