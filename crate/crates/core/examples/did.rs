// SPDX-License-Identifier: MIT OR Apache-2.0

//! Difference-in-differences on a generated panel, with and without a trend term.
//!
//! `cargo run --example did`

use causal_panel::did::{fit_did, parallel_trends_diagnostic, DidSpec};
use causal_panel::paneldata::{aggregate_telemetry, merge_panels, GroupField, Statistic, SYSTEM_COUNT};
use causal_panel::simgen::{generate, ScenarioConfig, TreatmentConfig, UnitConfig};
use chrono::NaiveDate;

fn main() -> causal_panel::Result<()> {
    let day = |m, d| NaiveDate::from_ymd_opt(2020, m, d).unwrap();
    let mut treated = UnitConfig::new("California", 5.5, 11.0);
    let mut control = UnitConfig::new("Taiwan", 4.8, 10.0);
    treated.trend_per_day = 0.005;
    control.trend_per_day = 0.005;
    let mut config = ScenarioConfig::new(day(1, 1), 150, vec![treated, control], 42);
    config.noise_sigma = 0.4;
    config.treatment = Some(TreatmentConfig {
        unit: "California".into(),
        activation: day(3, 19),
        deactivation: None,
        effect_hours: 1.3,
        effect_watts: 0.0,
        effect_onset_days: 7,
    });
    let scenario = generate(&config)?;
    let panel = aggregate_telemetry(
        &scenario.telemetry,
        &[GroupField::UnitId],
        "usage_hours",
        Statistic::Mean,
    )?;
    let panel = merge_panels(&panel, &scenario.policy)?;

    let spec = DidSpec::new(["California"], ["Taiwan"], day(3, 19));
    for (label, spec) in [
        ("plain", spec.clone()),
        ("with trend", spec.clone().with_time_trend(true)),
    ] {
        let fit = fit_did(&panel, &spec)?;
        println!(
            "{label:>10}: beta0 = {:.4} (se {:.4}), 95% CI [{:.4}, {:.4}], p = {:.2e}",
            fit.beta0, fit.stderr_beta0, fit.confidence_interval.0, fit.confidence_interval.1, fit.p_value
        );
    }

    let diag = parallel_trends_diagnostic(&panel, &spec)?;
    println!(
        "pre-period slope gap {:.5} per day (se {:.5}) over {} dates",
        diag.slope_gap, diag.slope_gap_stderr, diag.pre_dates
    );
    println!("devices per day: {:?}", panel.covariate(SYSTEM_COUNT));
    Ok(())
}
