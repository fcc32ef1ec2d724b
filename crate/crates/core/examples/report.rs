// SPDX-License-Identifier: MIT OR Apache-2.0

//! Effects per chassis and CPU family, merged into one grid.
//!
//! Each hardware segment gets its own panel and DiD fit; the result documents
//! are then merged the same way the `report` command does. The generator
//! applies one effect to every device, so all nine cells agree.
//!
//! `cargo run --example report`

use causal_panel::cli::{merge_artifacts, DidDocument};
use causal_panel::did::{fit_did, DidSpec};
use causal_panel::paneldata::{
    aggregate_telemetry, merge_panels, Chassis, CpuFamily, GroupField, Statistic, TelemetryFilter, SYSTEM_COUNT,
};
use causal_panel::simgen::{generate, ScenarioConfig, TreatmentConfig, UnitConfig};
use chrono::NaiveDate;

fn main() -> causal_panel::Result<()> {
    let day = |m, d| NaiveDate::from_ymd_opt(2020, m, d).unwrap();
    let mut usa = UnitConfig::new("USA", 6.0, 12.0);
    let mut can = UnitConfig::new("CAN", 5.0, 10.0);
    usa.devices_per_day = 27;
    can.devices_per_day = 27;
    let mut config = ScenarioConfig::new(day(1, 1), 120, vec![usa, can], 5);
    config.noise_sigma = 0.2;
    config.treatment = Some(TreatmentConfig {
        unit: "USA".into(),
        activation: day(3, 16),
        deactivation: None,
        effect_hours: 1.3,
        effect_watts: 0.0,
        effect_onset_days: 0,
    });
    let scenario = generate(&config)?;

    let mut docs = Vec::new();
    for chassis in [Chassis::Notebook, Chassis::Desktop, Chassis::TwoInOne] {
        for cpu in [CpuFamily::I3, CpuFamily::I5, CpuFamily::I7] {
            let filter = TelemetryFilter {
                chassis: Some(chassis),
                cpu_family: Some(cpu),
                vpro: None,
            };
            let panel = aggregate_telemetry(
                filter.apply(&scenario.telemetry),
                &[GroupField::UnitId],
                "usage_hours",
                Statistic::Mean,
            )?;
            let panel = merge_panels(&panel, &scenario.policy)?;
            let spec = DidSpec::new(["USA"], ["CAN"], day(3, 16));
            let fit = fit_did(&panel, &spec)?;
            let doc = DidDocument {
                kind: DidDocument::KIND.into(),
                outcome: panel.outcome_name().into(),
                segment: [
                    ("chassis".to_string(), chassis.to_string()),
                    ("cpu_family".to_string(), cpu.to_string()),
                ]
                .into(),
                treated_units: vec!["USA".into()],
                control_units: vec!["CAN".into()],
                treatment_date: day(3, 16),
                system_count: panel
                    .covariate(SYSTEM_COUNT)
                    .map(|c| c[panel.unit_index("USA").unwrap()]),
                fit,
                parallel_trends: None,
            };
            docs.push((format!("{chassis}-{cpu}"), serde_json::to_value(&doc).unwrap()));
        }
    }
    let table = merge_artifacts(&docs)?;
    print!("{}", table.render());
    Ok(())
}
