// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use chrono::NaiveDate;

use super::calendar::day_range;
use super::panel::PanelDataset;
use super::policy::PolicyTimeline;
use super::telemetry::{Chassis, CpuFamily, TelemetryRecord};
use crate::error::{Error, Result};

/// Separator between the parts of a composite group label, e.g. `China|Notebook`.
pub const GROUP_SEPARATOR: char = '|';

pub const SYSTEM_COUNT: &str = "system_count";
pub const VPRO_PERCENTAGE: &str = "vpro_percentage";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupField {
    UnitId,
    Chassis,
    CpuFamily,
    Vpro,
}

impl FromStr for GroupField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_id" => Ok(GroupField::UnitId),
            "chassis" => Ok(GroupField::Chassis),
            "cpu_family" => Ok(GroupField::CpuFamily),
            "vpro" => Ok(GroupField::Vpro),
            other => Err(Error::Schema(format!("cannot group telemetry by {other:?}"))),
        }
    }
}

impl GroupField {
    fn name(self) -> &'static str {
        match self {
            GroupField::UnitId => "unit_id",
            GroupField::Chassis => "chassis",
            GroupField::CpuFamily => "cpu_family",
            GroupField::Vpro => "vpro",
        }
    }

    fn label(self, r: &TelemetryRecord) -> String {
        match self {
            GroupField::UnitId => r.unit_id.clone(),
            GroupField::Chassis => r.chassis.to_string(),
            GroupField::CpuFamily => r.cpu_family.to_string(),
            GroupField::Vpro => if r.vpro { "vpro" } else { "novpro" }.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    UsageHours,
    CpuWatts,
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "usage_hours" => Ok(Outcome::UsageHours),
            "cpu_watts" => Ok(Outcome::CpuWatts),
            other => Err(Error::Schema(format!("telemetry has no outcome field {other:?}"))),
        }
    }
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::UsageHours => "usage_hours",
            Outcome::CpuWatts => "cpu_watts",
        }
    }

    fn read(self, r: &TelemetryRecord) -> f64 {
        match self {
            Outcome::UsageHours => r.usage_hours,
            Outcome::CpuWatts => r.cpu_watts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    #[default]
    Mean,
}

/// Record filter used to disaggregate by hardware segment before aggregation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TelemetryFilter {
    pub chassis: Option<Chassis>,
    pub cpu_family: Option<CpuFamily>,
    pub vpro: Option<bool>,
}

impl TelemetryFilter {
    pub fn matches(&self, r: &TelemetryRecord) -> bool {
        self.chassis.is_none_or(|c| c == r.chassis)
            && self.cpu_family.is_none_or(|c| c == r.cpu_family)
            && self.vpro.is_none_or(|v| v == r.vpro)
    }

    pub fn apply<'a>(&self, records: &'a [TelemetryRecord]) -> Vec<&'a TelemetryRecord> {
        records.iter().filter(|r| self.matches(r)).collect()
    }
}

#[derive(Default)]
struct Cell<'a> {
    values: Vec<f64>,
    devices: BTreeSet<&'a str>,
}

/// Per-(group, date) mean of `outcome` over the shared calendar of all records.
///
/// Groups are labelled by their field values joined with `|` in the fixed order
/// unit_id, chassis, cpu_family, vpro; an empty `group_by` puts everything in
/// group `all`. Cells without records are masked. Two covariates are recorded
/// per group: `system_count` (mean distinct devices per observed day) and
/// `vpro_percentage` (share of distinct devices with vPro).
pub fn aggregate_telemetry<'a, I>(
    records: I,
    group_by: &[GroupField],
    outcome: &str,
    statistic: Statistic,
) -> Result<PanelDataset>
where
    I: IntoIterator<Item = &'a TelemetryRecord>,
{
    let outcome: Outcome = outcome.parse()?;
    let Statistic::Mean = statistic;
    let fields: BTreeSet<GroupField> = group_by.iter().copied().collect();

    let mut cells: BTreeMap<String, BTreeMap<NaiveDate, Cell<'a>>> = BTreeMap::new();
    let mut fleet: HashMap<String, BTreeMap<&'a str, bool>> = HashMap::new();
    let mut first: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    for r in records {
        r.validate()?;
        let label = if fields.is_empty() {
            "all".to_string()
        } else {
            fields
                .iter()
                .map(|f| f.label(r))
                .collect::<Vec<_>>()
                .join(&GROUP_SEPARATOR.to_string())
        };
        first = Some(first.map_or(r.date, |d| d.min(r.date)));
        last = Some(last.map_or(r.date, |d| d.max(r.date)));
        fleet
            .entry(label.clone())
            .or_default()
            .insert(r.device_id.as_str(), r.vpro);
        let cell = cells.entry(label).or_default().entry(r.date).or_default();
        cell.values.push(outcome.read(r));
        cell.devices.insert(r.device_id.as_str());
    }
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::Validation("no telemetry records to aggregate".into()));
    };
    let dates = day_range(first, last);

    let mut units = Vec::with_capacity(cells.len());
    let mut rows = Vec::with_capacity(cells.len());
    let mut system_count = Vec::with_capacity(cells.len());
    let mut vpro_pct = Vec::with_capacity(cells.len());
    for (label, by_date) in &cells {
        let row = dates
            .iter()
            .map(|d| {
                by_date.get(d).map(|cell| {
                    // Sorted summation keeps the mean independent of record order.
                    let mut v = cell.values.clone();
                    v.sort_by(f64::total_cmp);
                    v.iter().sum::<f64>() / v.len() as f64
                })
            })
            .collect();
        let counts: f64 = by_date.values().map(|c| c.devices.len() as f64).sum();
        system_count.push(counts / by_date.len() as f64);
        let devices = &fleet[label];
        let vpro = devices.values().filter(|&&v| v).count();
        vpro_pct.push(100.0 * vpro as f64 / devices.len() as f64);
        units.push(label.clone());
        rows.push(row);
    }

    let group_names: Vec<&str> = fields.iter().map(|f| f.name()).collect();
    let group_desc = if group_names.is_empty() {
        "none".to_string()
    } else {
        group_names.join(",")
    };
    PanelDataset::from_rows(outcome.name(), units, dates, rows)?
        .with_covariate(SYSTEM_COUNT, system_count)?
        .with_covariate(VPRO_PERCENTAGE, vpro_pct)?
        .with_metadata("group_by", group_desc)
}

/// Timeline key for a panel row: the label part before the first `|`.
pub fn base_unit(label: &str) -> &str {
    label.split(GROUP_SEPARATOR).next().unwrap_or(label)
}

/// Restricts the panel to dates covered by every relevant timeline and
/// attaches the policy code of each row's unit.
pub fn merge_panels(panel: &PanelDataset, timelines: &[PolicyTimeline]) -> Result<PanelDataset> {
    let by_unit: HashMap<&str, &PolicyTimeline> = timelines.iter().map(|t| (t.unit_id(), t)).collect();
    let missing: Vec<&str> = panel
        .unit_ids()
        .iter()
        .map(|u| base_unit(u))
        .filter(|u| !by_unit.contains_key(u))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "no policy timeline for unit(s): {}",
            missing.join(", ")
        )));
    }
    let row_timelines: Vec<&PolicyTimeline> = panel.unit_ids().iter().map(|u| by_unit[base_unit(u)]).collect();
    let keep: Vec<usize> = panel
        .dates()
        .iter()
        .enumerate()
        .filter(|(_, d)| row_timelines.iter().all(|t| t.contains(**d)))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Validation("panel and policy timelines share no dates".into()));
    }
    let restricted = panel.select_dates(&keep);
    let codes: Vec<u8> = row_timelines
        .iter()
        .flat_map(|t| {
            restricted
                .dates()
                .iter()
                .map(|d| t.code_on(*d).expect("date inside timeline"))
        })
        .collect();
    restricted.with_policy_codes(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paneldata::telemetry::{Chassis, CpuFamily};

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    fn rec(date: NaiveDate, dev: &str, unit: &str, hours: f64) -> TelemetryRecord {
        TelemetryRecord {
            date,
            device_id: dev.into(),
            unit_id: unit.into(),
            chassis: Chassis::Notebook,
            cpu_family: CpuFamily::I7,
            vpro: dev.ends_with('v'),
            usage_hours: hours,
            cpu_watts: 10.0,
        }
    }

    #[test]
    fn mean_of_two_records() {
        let recs = [rec(day(1, 1), "a", "X", 4.0), rec(day(1, 1), "bv", "X", 6.0)];
        let p = aggregate_telemetry(&recs, &[GroupField::UnitId], "usage_hours", Statistic::Mean).unwrap();
        assert_eq!(p.value(0, 0), Some(5.0));
        assert_eq!(p.covariate(SYSTEM_COUNT).unwrap(), &[2.0]);
        assert_eq!(p.covariate(VPRO_PERCENTAGE).unwrap(), &[50.0]);
    }

    #[test]
    fn single_record_is_identity_and_gaps_are_masked() {
        let recs = [rec(day(1, 1), "a", "X", 3.25), rec(day(1, 3), "a", "X", 1.0)];
        let p = aggregate_telemetry(&recs, &[GroupField::UnitId], "usage_hours", Statistic::Mean).unwrap();
        assert_eq!(p.n_dates(), 3);
        assert_eq!(p.value(0, 0), Some(3.25));
        assert_eq!(p.value(0, 1), None);
    }

    #[test]
    fn composite_labels_and_unknown_outcome() {
        let recs = [rec(day(1, 1), "a", "X", 3.0)];
        let p = aggregate_telemetry(
            &recs,
            &[GroupField::Chassis, GroupField::UnitId],
            "cpu_watts",
            Statistic::Mean,
        )
        .unwrap();
        assert_eq!(p.unit_ids(), ["X|Notebook"]);
        assert_eq!(p.outcome_name(), "cpu_watts");
        assert!(matches!(
            aggregate_telemetry(&recs, &[], "gpu_watts", Statistic::Mean),
            Err(Error::Schema(_))
        ));
    }

    fn timeline(unit: &str, start: NaiveDate, n: usize) -> PolicyTimeline {
        PolicyTimeline::from_start(unit, start, vec![1; n]).unwrap()
    }

    fn panel(start: NaiveDate, n: usize, units: &[&str]) -> PanelDataset {
        let dates: Vec<_> = start.iter_days().take(n).collect();
        PanelDataset::from_rows(
            "usage_hours",
            units.iter().map(|s| s.to_string()).collect(),
            dates,
            units.iter().map(|_| (0..n).map(|t| Some(t as f64)).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn merge_with_identical_ranges_keeps_values() {
        let p = panel(day(1, 1), 10, &["A", "B"]);
        let m = merge_panels(&p, &[timeline("B", day(1, 1), 10), timeline("A", day(1, 1), 10)]).unwrap();
        assert_eq!(m.dates(), p.dates());
        assert_eq!(m.row(1), p.row(1));
        assert_eq!(m.policy_code(0, 3), Some(1));
    }

    #[test]
    fn merge_intersects_date_ranges() {
        let p = panel(day(1, 1), 182, &["A"]);
        assert_eq!(*p.dates().last().unwrap(), day(6, 30));
        let t = timeline("A", day(2, 1), 335);
        let m = merge_panels(&p, &[t]).unwrap();
        assert_eq!(m.dates()[0], day(2, 1));
        assert_eq!(*m.dates().last().unwrap(), day(6, 30));
        assert_eq!(m.value(0, 0), Some(31.0));
    }

    #[test]
    fn merge_names_missing_unit() {
        let p = panel(day(1, 1), 5, &["A", "Ghost|Notebook"]);
        let err = merge_panels(&p, &[timeline("A", day(1, 1), 5)]).unwrap_err();
        assert!(err.to_string().contains("Ghost"), "{err}");
    }
}
