// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generate a scenario with known ground truth and aggregate it to a panel.
//!
//! `cargo run --example simulate`

use causal_panel::paneldata::{aggregate_telemetry, extract_treatment_events, merge_panels, GroupField, Statistic};
use causal_panel::simgen::{describe, generate, ScenarioConfig};

const SCENARIO: &str = r#"
start_date = "2020-01-01"
days = 120
seed = 7
noise_sigma = 0.1

[[units]]
id = "USA"
baseline_hours = 6.0
baseline_watts = 12.0
[[units]]
id = "CAN"
baseline_hours = 5.0
baseline_watts = 10.0
weekly_amplitude = 0.5

[treatment]
unit = "USA"
activation = "2020-03-16"
deactivation = "2020-04-20"
effect_hours = 1.3
effect_watts = 0.5
"#;

fn main() -> causal_panel::Result<()> {
    let config = ScenarioConfig::from_toml(SCENARIO)?;
    let scenario = generate(&config)?;
    print!("{}", describe(&scenario.manifest));

    for timeline in &scenario.policy {
        for e in extract_treatment_events(timeline) {
            println!("{} {:?} on {}", e.unit_id, e.kind, e.date);
        }
    }

    let panel = aggregate_telemetry(
        &scenario.telemetry,
        &[GroupField::UnitId],
        "usage_hours",
        Statistic::Mean,
    )?;
    let panel = merge_panels(&panel, &scenario.policy)?;
    println!(
        "{} telemetry rows -> {} units x {} days",
        scenario.telemetry.len(),
        panel.n_units(),
        panel.n_dates()
    );
    for (u, id) in panel.unit_ids().iter().enumerate() {
        let row = panel.row(u);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        println!("  {id}: mean usage {mean:.3} h/day");
    }
    Ok(())
}
