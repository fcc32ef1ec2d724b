// SPDX-License-Identifier: MIT OR Apache-2.0

//! Date parsing and delimiter sniffing shared by the text ingesters.

use chrono::NaiveDate;

/// On-disk date notation. Detected once per file from the first data row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateFormat {
    /// `20200316`
    Compact,
    /// `2020-03-16`
    Iso,
}

impl DateFormat {
    pub fn detect(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        if raw.len() == 8 && raw.bytes().all(|b| b.is_ascii_digit()) {
            Some(DateFormat::Compact)
        } else if NaiveDate::parse_from_str(raw, "%Y-%m-%d").is_ok() {
            Some(DateFormat::Iso)
        } else {
            None
        }
    }

    pub fn parse(self, raw: &str) -> Option<NaiveDate> {
        let raw = raw.trim();
        match self {
            DateFormat::Compact => {
                if raw.len() != 8 || !raw.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                NaiveDate::parse_from_str(raw, "%Y%m%d").ok()
            }
            DateFormat::Iso => NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok(),
        }
    }

    pub fn format(self, date: NaiveDate) -> String {
        match self {
            DateFormat::Compact => date.format("%Y%m%d").to_string(),
            DateFormat::Iso => date.format("%Y-%m-%d").to_string(),
        }
    }
}

/// Picks the most frequent of `,`, `\t` and `;` on the header line.
pub fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    [b',', b'\t', b';']
        .into_iter()
        .max_by_key(|&d| (header.bytes().filter(|&b| b == d).count(), d == b','))
        .unwrap_or(b',')
}

/// Every day from `start` through `end`, inclusive.
pub fn day_range(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start.iter_days().take_while(|d| *d <= end).collect()
}

pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}
