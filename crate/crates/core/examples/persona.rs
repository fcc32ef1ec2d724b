// SPDX-License-Identifier: MIT OR Apache-2.0

//! Persona drift: cluster devices once, then count personas over sliding windows.
//!
//! `cargo run --example persona`

use causal_panel::changepoint::PenaltyConfig;
use causal_panel::persona::{
    fit_kmeans, persona_changepoint, window_vectors, windowed_counts, DEFAULT_STRIDE_DAYS, DEFAULT_WIDTH_DAYS,
};
use causal_panel::simgen::{generate, label_personas, PersonaShiftConfig, ScenarioConfig, UnitConfig};
use chrono::NaiveDate;

fn main() -> causal_panel::Result<()> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut config = ScenarioConfig::new(start, 140, vec![UnitConfig::new("fleet", 5.0, 10.0)], 9);
    config.persona_devices = 600;
    config.persona_shift = Some(PersonaShiftConfig {
        date: NaiveDate::from_ymd_opt(2020, 3, 11).unwrap(),
        from: "Office/Productivity".into(),
        to: "Casual Gamers".into(),
        fraction: 0.2,
    });
    let usage = generate(&config)?.usage;

    let vectors = window_vectors(&usage, start, DEFAULT_WIDTH_DAYS)?;
    let model = label_personas(fit_kmeans(&vectors, 6, 0)?)?;
    let series = windowed_counts(&usage, &model, DEFAULT_WIDTH_DAYS, DEFAULT_STRIDE_DAYS)?;

    print!("{:<12}", "window");
    for name in &series.persona_names {
        print!("{:>24}", name);
    }
    println!();
    for (start, row) in series.window_starts.iter().zip(&series.counts) {
        print!("{start:<12}");
        for c in row {
            print!("{c:>24}");
        }
        println!();
    }

    for (name, seg) in persona_changepoint(&series, &PenaltyConfig::bic())? {
        let windows: Vec<NaiveDate> = seg.breakpoints.iter().map(|&b| series.diff_window_start(b)).collect();
        if !windows.is_empty() {
            println!("{name}: change into {windows:?}");
        }
    }
    Ok(())
}
